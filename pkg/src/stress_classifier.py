"""
帧级重音分类器：SVC (RBF)、随机森林、标签传播 (LPA)

流程：逐句 MVN 后的特征 → 全局 MVN → 上下文堆叠 → SMOTE（仅训练集）→ 训练。
"""

import logging
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import joblib
import numpy as np
from imblearn.over_sampling import SMOTE
from scipy import sparse
from scipy.special import expit
from sklearn.ensemble import RandomForestClassifier
from sklearn.metrics import confusion_matrix
from sklearn.metrics.pairwise import rbf_kernel
from sklearn.neighbors import NearestNeighbors
from sklearn.svm import SVC

from src.config import LpaConfig, ModelConfig, SmoteConfig, layout_digest
from src.data_types import FeatureMatrix
from src.dsp_features import NormStats, mean_variance_normalize, stack_context
from src.errors import (
    EmptyInput,
    LayoutMismatch,
    LengthMismatch,
    NonFinite,
    SingleClass,
    Underdetermined,
    VersionMismatch,
)

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
UNLABELED = -1


def _as_array(X):
    """返回 (float64 数组, 布局摘要)；普通数组按宽度生成通用列名"""
    if isinstance(X, FeatureMatrix):
        return X.values.astype(np.float64), X.layout_digest
    values = np.asarray(X, dtype=np.float64)
    if values.ndim == 1:
        values = values.reshape(len(values), -1) if values.size else values.reshape(0, 0)
    return values, layout_digest([f"c{i}" for i in range(values.shape[1])])


def resolve_gamma(gamma, X):
    """"scale" 规则：gamma = 1 / (d · var(X))"""
    if gamma != "scale":
        return float(gamma)
    var = float(X.var()) if X.size else 0.0
    return 1.0 / (X.shape[1] * var) if var > 0 else 1.0


# SMOTE

def smote_oversample(X, y, cfg=None):
    """
    SMOTE 过采样，合成样本 s = a + u·(b − a)，b 为 a 的少数类近邻

    参数:
        X: 特征行
        y: 类别标签
        cfg: SmoteConfig

    返回:
        (X', y')：原始行在前且保持不变，合成样本追加在后

    异常:
        SingleClass: 只有一个类别
    """
    cfg = cfg or SmoteConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise SingleClass(f"SMOTE 需要至少两个类别，当前只有 {classes.tolist()}")
    minority = classes[np.argmin(counts)]
    n_minority, n_majority = int(counts.min()), int(counts.max())
    target = int(round(cfg.target_ratio * n_majority))
    if target <= n_minority:
        return X.copy(), y.copy()
    if n_minority < 2:
        logger.warning("SMOTE 直接返回：少数类 %r 只有 %d 个样本", minority, n_minority)
        return X.copy(), y.copy()

    k = min(cfg.k_neighbors, n_minority - 1)
    sampler = SMOTE(sampling_strategy={minority: target}, k_neighbors=k, random_state=cfg.rng_seed)
    X_res, y_res = sampler.fit_resample(X, y)
    logger.info("SMOTE：少数类 %r %d -> %d (k=%d)", minority, n_minority, target, k)
    return np.asarray(X_res, dtype=np.float64), np.asarray(y_res)


# 标签传播

class LabelPropagationModel:
    """
    图上的标签传播

    kNN 图（RBF 边权）或稠密 RBF 图，对称归一化 S = D^-1/2 W D^-1/2，
    迭代 F ← α·S·F + (1 − α)·Y 直到变化小于 tol。y = -1 表示未标注样本。
    新样本的类别概率是其最近训练样本标签分布的 RBF 加权平均。
    """

    def __init__(self, kernel="knn", n_neighbors=7, gamma="scale", alpha=0.2, max_iter=1000, tol=1e-3):
        self.kernel = kernel
        self.n_neighbors = n_neighbors
        self.gamma = gamma
        self.alpha = alpha
        self.max_iter = max_iter
        self.tol = tol

    @classmethod
    def from_config(cls, cfg: LpaConfig):
        return cls(cfg.kernel, cfg.n_neighbors, cfg.gamma, cfg.alpha, cfg.max_iter, cfg.tol)

    def _graph(self, X):
        if self.kernel == "knn":
            dist, ind = self.nn_.kneighbors()  # 不含自身
            rows = np.repeat(np.arange(X.shape[0]), ind.shape[1])
            weights = np.exp(-self.gamma_ * dist.ravel() ** 2)
            W = sparse.csr_matrix((weights, (rows, ind.ravel())), shape=(X.shape[0], X.shape[0]))
            return W.maximum(W.T)
        K = rbf_kernel(X, gamma=self.gamma_)
        np.fill_diagonal(K, 0.0)
        return sparse.csr_matrix(K)

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n = X.shape[0]
        if n < self.n_neighbors + 1:
            raise Underdetermined(f"标签传播至少需要 {self.n_neighbors + 1} 个样本，当前 {n} 个")
        self.classes_ = np.unique(y[y != UNLABELED])
        self.gamma_ = resolve_gamma(self.gamma, X)
        # knn 核的训练样本已保存在 nn_ 中
        self.X_ = X if self.kernel == "rbf" else None
        self.nn_ = NearestNeighbors(n_neighbors=self.n_neighbors).fit(X)

        W = self._graph(X)
        degree = np.asarray(W.sum(axis=1)).ravel()
        inv_sqrt = np.zeros_like(degree)
        np.divide(1.0, np.sqrt(degree), out=inv_sqrt, where=degree > 0)
        D = sparse.diags(inv_sqrt)
        S = D @ W @ D

        Y = np.zeros((n, len(self.classes_)))
        labeled = y != UNLABELED
        Y[labeled, np.searchsorted(self.classes_, y[labeled])] = 1.0
        F = Y.copy()
        for iteration in range(1, self.max_iter + 1):
            F_next = self.alpha * (S @ F) + (1.0 - self.alpha) * Y
            change = np.abs(F_next - F).sum()
            F = F_next
            if change < self.tol:
                break
        else:
            logger.warning("标签传播在 %d 次迭代内未收敛", self.max_iter)
        self.n_iter_ = iteration

        totals = F.sum(axis=1, keepdims=True)
        uniform = np.full_like(F, 1.0 / len(self.classes_))
        self.label_distributions_ = np.where(totals > 0, F / np.where(totals > 0, totals, 1.0), uniform)
        self.transduction_ = self.classes_[np.argmax(self.label_distributions_, axis=1)]
        return self

    def predict_proba(self, X):
        X = np.asarray(X, dtype=np.float64)
        if self.kernel == "knn":
            dist, ind = self.nn_.kneighbors(X)
            weights = np.exp(-self.gamma_ * dist ** 2)
            weights[weights.sum(axis=1) == 0] = 1.0
            proba = np.einsum("ik,ikc->ic", weights, self.label_distributions_[ind])
        else:
            weights = rbf_kernel(X, self.X_, gamma=self.gamma_)
            weights[weights.sum(axis=1) == 0] = 1.0
            proba = weights @ self.label_distributions_
        return proba / proba.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


# 训练与预测

@dataclass
class StressModel:
    family: str
    estimator: object
    feature_digest: str
    norm_stats: Optional[NormStats] = None
    window: int = 1
    feature_set: str = ""
    config: dict = field(default_factory=dict)


def _check_training_data(X, y):
    if X.shape[0] != len(y):
        raise LengthMismatch(f"特征行数 {X.shape[0]} 与标签数 {len(y)} 不一致")
    if not np.all(np.isfinite(X)):
        raise NonFinite("训练特征含有非有限值")
    labels = np.unique(y[y != UNLABELED])
    if len(labels) < 2:
        raise SingleClass(f"训练标签只有一个类别: {labels.tolist()}")


def train(X, y, cfg=None, norm_stats=None, window=1, feature_set="", config=None):
    """
    训练帧级重音分类器

    参数:
        X: FeatureMatrix 或二维数组（已归一化、已堆叠）
        y: 0/1 标签；lpa 允许 -1 表示未标注
        cfg: ModelConfig
        norm_stats, window, feature_set: 随模型保存，供推理时复现特征

    返回:
        StressModel

    异常:
        SingleClass, NonFinite, Underdetermined, LengthMismatch
    """
    cfg = cfg or ModelConfig()
    values, digest = _as_array(X)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    _check_training_data(values, y)

    if cfg.family == "svc":
        if np.any(y == UNLABELED):
            raise SingleClass("svc 不接受未标注样本")
        estimator = SVC(C=cfg.svc.penalty_c, kernel="rbf", gamma=cfg.svc.gamma, tol=cfg.svc.tol)
        estimator.fit(values, y)
    elif cfg.family == "rfc":
        if np.any(y == UNLABELED):
            raise SingleClass("rfc 不接受未标注样本")
        estimator = RandomForestClassifier(
            n_estimators=cfg.rfc.n_trees, max_depth=cfg.rfc.max_depth, max_features="sqrt",
            bootstrap=True, criterion="gini", random_state=cfg.rfc.rng_seed, n_jobs=1)
        estimator.fit(values, y)
    else:
        estimator = LabelPropagationModel.from_config(cfg.lpa).fit(values, y)
    logger.info("%s 训练完成：%d 行 x %d 列", cfg.family, values.shape[0], values.shape[1])
    return StressModel(cfg.family, estimator, digest, norm_stats, window, feature_set, config or {})


def predict(model, X):
    """
    逐帧预测

    返回:
        (labels, scores)：scores ∈ [0,1] 为重音类的分数，labels = scores >= 0.5

    异常:
        LayoutMismatch: 输入布局与训练时不同
    """
    values, digest = _as_array(X)
    if values.shape[0] == 0:
        return np.zeros(0, dtype=np.int8), np.zeros(0)
    if digest != model.feature_digest:
        raise LayoutMismatch("输入特征布局与模型训练时的布局不一致")
    estimator = model.estimator
    if model.family == "svc":
        scores = expit(estimator.decision_function(values))
    elif model.family == "rfc":
        positive = int(np.flatnonzero(estimator.classes_ == 1)[0])
        votes = np.stack([tree.predict(values) for tree in estimator.estimators_])
        scores = (votes == positive).mean(axis=0)
    else:
        positive = int(np.flatnonzero(estimator.classes_ == 1)[0])
        scores = estimator.predict_proba(values)[:, positive]
    return (scores >= 0.5).astype(np.int8), scores


# 评价

@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    tn: int
    fp: int
    fn: int


def evaluate(pred, truth):
    """
    帧级准确率和重音类 F1

    异常:
        LengthMismatch: 长度不同
        EmptyInput: 没有样本
    """
    pred = np.asarray(pred).astype(np.int64).reshape(-1)
    truth = np.asarray(truth).astype(np.int64).reshape(-1)
    if len(pred) != len(truth):
        raise LengthMismatch(f"预测长度 {len(pred)} 与真值长度 {len(truth)} 不一致")
    if len(pred) == 0:
        raise EmptyInput("没有可评价的样本")
    tn, fp, fn, tp = (int(v) for v in confusion_matrix(truth, pred, labels=[0, 1]).ravel())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if tp == 0:
        f1 = 1.0 if fp + fn == 0 else 0.0
    else:
        f1 = 2 * tp / (2 * tp + fp + fn)
    return Metrics((tp + tn) / len(pred), precision, recall, f1, tp, tn, fp, fn)


# 语料装配

def build_training_matrix(matrices, labels, window):
    """
    逐句特征 → 全局 MVN → 逐句上下文堆叠 → 拼接

    参数:
        matrices: 逐句 FeatureMatrix 列表（列布局相同）
        labels: 与之对应的逐帧标签（数组或 FrameLabels）
        window: 上下文窗口

    返回:
        (堆叠后的 FeatureMatrix, 标签数组, NormStats)
    """
    if not matrices:
        raise EmptyInput("没有训练语句")
    label_arrays = [np.asarray(getattr(l, "labels", l), dtype=np.int64) for l in labels]
    for matrix, lab in zip(matrices, label_arrays):
        if matrix.n_frames != len(lab):
            raise LengthMismatch(f"特征帧数 {matrix.n_frames} 与标签帧数 {len(lab)} 不一致")
    _, stats = mean_variance_normalize(np.vstack([m.values for m in matrices]))
    stacked = [prepare_inputs(m, stats, window) for m in matrices]
    X = FeatureMatrix(np.vstack([s.values for s in stacked]), stacked[0].column_layout,
                      np.concatenate([s.frame_times for s in stacked]), stacked[0].config_digest)
    return X, np.concatenate(label_arrays), stats


def prepare_inputs(matrix, stats, window):
    """用训练集统计量归一化后做上下文堆叠"""
    values = stats.apply(matrix.values) if stats is not None else matrix.values
    normalized = FeatureMatrix(values, matrix.column_layout, matrix.frame_times, matrix.config_digest)
    return stack_context(normalized, window)


def train_on_corpus(matrices, labels, config):
    """
    语料级训练：build_training_matrix → SMOTE（只作用于训练行）→ train

    参数:
        matrices: 逐句 FeatureMatrix（已按 config.feature_set 选列）
        labels: 逐句标签
        config: PipelineConfig

    返回:
        StressModel，带全局归一化统计量、窗口和特征集
    """
    X, y, stats = build_training_matrix(matrices, labels, config.window)
    values, y = smote_oversample(X.values, y, config.smote)
    X = FeatureMatrix(values, X.column_layout, np.zeros(len(values)), X.config_digest)
    return train(X, y, config.model, stats, config.window, config.feature_set, config.to_dict())


def speaker_disjoint_split(speakers, test_fraction=0.2, seed=0):
    """
    按说话人划分训练/测试集，同一说话人的语句不会同时出现在两边

    返回:
        (训练集下标数组, 测试集下标数组)
    """
    speakers = np.asarray(list(speakers))
    unique = np.array(sorted(set(speakers.tolist())))
    rng = np.random.default_rng(seed)
    if len(unique) < 2:
        logger.warning("只有一个说话人，改为按句划分")
        order = rng.permutation(len(speakers))
        n_test = max(1, int(round(len(speakers) * test_fraction)))
        return np.sort(order[n_test:]), np.sort(order[:n_test])
    n_test = min(len(unique) - 1, max(1, int(round(len(unique) * test_fraction))))
    test_speakers = set(rng.permutation(unique)[:n_test].tolist())
    is_test = np.array([s in test_speakers for s in speakers.tolist()])
    return np.flatnonzero(~is_test), np.flatnonzero(is_test)


# 持久化

def save_model(model, path):
    """保存为带版本号的 joblib 文档"""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "family": model.family,
        "feature_digest": model.feature_digest,
        "params": model.estimator,
        "norm_stats": model.norm_stats.to_dict() if model.norm_stats is not None else None,
        "window": model.window,
        "feature_set": model.feature_set,
        "config": model.config,
    }
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-model-")
    os.close(fd)
    try:
        joblib.dump(doc, tmp_path)
        os.replace(tmp_path, path)
    finally:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)


def load_model(path):
    """
    读取模型文档

    异常:
        FileNotFoundError: 文件不存在
        VersionMismatch: 文件损坏或版本/类型不受支持
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"模型文件不存在: {path}")
    try:
        doc = joblib.load(path)
    except Exception as exc:
        raise VersionMismatch(f"{path}: 无法读取模型文档 ({type(exc).__name__})") from None
    if not isinstance(doc, dict) or doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise VersionMismatch(f"{path}: 不支持的模型文档版本")
    if doc.get("family") not in ("svc", "rfc", "lpa"):
        raise VersionMismatch(f"{path}: 未知模型类型 {doc.get('family')!r}")
    stats = NormStats.from_dict(doc["norm_stats"]) if doc.get("norm_stats") else None
    return StressModel(doc["family"], doc["params"], doc["feature_digest"], stats,
                       doc.get("window", 1), doc.get("feature_set", ""), doc.get("config", {}))
