"""
重音迁移工具包的异常类型

所有异常都继承自 ValueError，调用方可以像处理普通的输入错误一样捕获它们。
"""


class StressTransferError(ValueError):
    """工具包内所有数据错误的基类"""


class InvalidConfig(StressTransferError):
    pass


# io_formats
class MalformedContainer(StressTransferError):
    pass


class UnsupportedEncoding(StressTransferError):
    pass


class EmptyAudio(StressTransferError):
    pass


class SchemaError(StressTransferError):
    pass


class RangeError(StressTransferError):
    pass


class DigestMismatch(StressTransferError):
    pass


class IndexOutOfBounds(StressTransferError):
    pass


class NonFinite(StressTransferError):
    pass


# dsp_features
class WindowEven(StressTransferError):
    pass


# annotation
class UnequalRaterCounts(StressTransferError):
    pass


class DegenerateAgreement(StressTransferError):
    """期望一致率 P̄e = 1，kappa 无定义"""


class TooFewAnnotators(StressTransferError):
    pass


class KappaBelowThreshold(StressTransferError):
    pass


# stress_classifier
class SingleClass(StressTransferError):
    pass


class Underdetermined(StressTransferError):
    pass


class LayoutMismatch(StressTransferError):
    pass


class LengthMismatch(StressTransferError):
    pass


class EmptyInput(StressTransferError):
    pass


class VersionMismatch(StressTransferError):
    pass


# word_postprocess
class GridMismatch(StressTransferError):
    pass


class EmptyRange(StressTransferError):
    pass


class WordListMismatch(StressTransferError):
    pass


# pde_modifier
class UnknownWordIndex(StressTransferError):
    pass


class NegativeDuration(StressTransferError):
    pass


class InvalidBounds(StressTransferError):
    pass
