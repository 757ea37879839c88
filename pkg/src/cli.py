"""
命令行入口：按阶段串起整个重音迁移流程

    python -m src.cli synth      OUT_DIR
    python -m src.cli features   WAV_DIR FEAT_DIR
    python -m src.cli aggregate  ANN_DIR GOLD_DIR
    python -m src.cli stats      ANN_DIR
    python -m src.cli train      FEAT_DIR GOLD_DIR MODEL
    python -m src.cli detect     WAV WORDS MODEL CUES
    python -m src.cli eval       FEAT_DIR GOLD_DIR WORDS_DIR [--report PATH]
    python -m src.cli transfer   CUES MT_ALIGNMENT TARGET_CUES
    python -m src.cli modify     CONTOURS TARGET_CUES OUT [--plot PNG]

退出码：0 成功，1 数据错误，2 用法错误。
"""

import argparse
import dataclasses
import glob
import logging
import os
import sys

import matplotlib.pyplot as plt
import numpy as np
from joblib import Parallel, delayed

from src.annotation import aggregate_regions, dataset_stats
from src.config import FEATURE_SETS, MODEL_FAMILIES, VARIANCE_MODES, load_config
from src.cue_transfer import map_cues
from src.data_types import FrameLabels
from src.dsp_features import extract_base_features, normalize_features, select_columns
from src.errors import InvalidConfig, LengthMismatch, StressTransferError
from src.io_formats import (
    parse_annotation_file,
    parse_gold_labels,
    parse_mt_alignment,
    parse_stress_cues,
    parse_target_cues,
    parse_token_contours,
    parse_word_alignment,
    read_bytes,
    read_feature_header,
    read_feature_matrix,
    read_wav,
    serialize_annotation_set,
    serialize_gold_labels,
    serialize_modified_contours,
    serialize_mt_alignment,
    serialize_stress_cues,
    serialize_token_contours,
    serialize_word_alignment,
    write_bytes_atomic,
    write_feature_matrix,
    write_json_atomic,
    write_wav,
)
from src.pde_modifier import apply_cues, clamp_scales, plot_contours
from src.stress_classifier import (
    evaluate,
    load_model,
    predict,
    prepare_inputs,
    save_model,
    speaker_disjoint_split,
    train_on_corpus,
)
from src.synthetic import synth_corpus
from src.word_postprocess import build_stress_cues, gold_word_decisions, post_accuracy, word_level_stress

logger = logging.getLogger(__name__)

FEATURE_SUFFIX = ".feat"
FEATURE_SET_NAMES = {"f0e": "F0+Energy", "full": "F0+Energy+MFCC+SDC"}


def feature_store_config(config):
    """特征文件总是保存全特征集，f0e 在训练/推理时按列选取"""
    return dataclasses.replace(config.feature_config, feature_set="full")


def _list_files(directory, pattern):
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"目录不存在: {directory}")
    return sorted(glob.glob(os.path.join(directory, pattern)))


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def _report_failures(failures):
    for path, cause in failures:
        print(f"{path}: {cause}", file=sys.stderr)
    return 1 if failures else 0


# 特征提取

def _features_job(wav_path, out_path, store_config, fail_fast):
    """单个文件的特征提取；返回 (路径, 状态, 错误原因)"""
    try:
        digest = store_config.digest()
        if os.path.exists(out_path) and os.path.getmtime(out_path) >= os.path.getmtime(wav_path):
            try:
                if read_feature_header(out_path)[3] == digest:
                    return wav_path, "skipped", None
            except StressTransferError:
                pass
        audio = read_wav(wav_path)
        base = extract_base_features(audio, store_config)
        normalized, _ = normalize_features(base)
        write_feature_matrix(normalized, out_path)
        return wav_path, "written", None
    except (StressTransferError, OSError) as exc:
        if fail_fast:
            raise
        return wav_path, "failed", str(exc)


def cmd_features(args, config):
    wavs = _list_files(args.wav_dir, "*.wav")
    store_config = feature_store_config(config)
    os.makedirs(args.out_dir, exist_ok=True)
    jobs = [(w, os.path.join(args.out_dir, _stem(w) + FEATURE_SUFFIX)) for w in wavs]
    results = Parallel(n_jobs=config.jobs)(
        delayed(_features_job)(w, out, store_config, args.fail_fast) for w, out in jobs)
    counts = {"written": 0, "skipped": 0, "failed": 0}
    failures = []
    for path, status, cause in results:
        counts[status] += 1
        if cause is not None:
            logger.error("%s 特征提取失败: %s", path, cause)
            failures.append((path, cause))
    print(f"{len(wavs)} files: {counts['written']} written, {counts['skipped']} skipped, "
          f"{counts['failed']} failed")
    return _report_failures(failures)


# 金标聚合与统计

def _load_annotation_sets(ann_dir):
    return [(path, parse_annotation_file(read_bytes(path))) for path in _list_files(ann_dir, "*.json")]


def cmd_aggregate(args, config):
    failures = []
    kappas = []
    for path in _list_files(args.ann_dir, "*.json"):
        try:
            annotation_set = parse_annotation_file(read_bytes(path))
            grid = dataclasses.replace(config.frame, sample_rate=annotation_set.sample_rate)
            result = aggregate_regions(annotation_set, grid, config.min_annotators, config.min_kappa)
        except StressTransferError as exc:
            if args.fail_fast:
                raise
            logger.warning("跳过 %s: %s", path, exc)
            failures.append((path, str(exc)))
            continue
        out = os.path.join(args.out_dir, f"{annotation_set.audio_id}.json")
        write_bytes_atomic(out, serialize_gold_labels(
            annotation_set.audio_id, result.frame_labels, result.gold_regions, result.kappa,
            annotation_set.speaker))
        kappas.append(result.kappa)
    mean_kappa = float(np.mean(kappas)) if kappas else float("nan")
    print(f"{len(kappas)} gold files written, mean kappa {mean_kappa:.3f}, {len(failures)} failed")
    return _report_failures(failures)


def cmd_stats(args, config):
    stats = dataset_stats([s for _, s in _load_annotation_sets(args.ann_dir)])
    for line in stats.summary_lines():
        print(line)
    return 0


# 训练、检测与评测

def _load_labeled_corpus(feat_dir, gold_dir, store_config):
    """按 audio_id 配对特征文件和金标文档，返回 (ids, 全特征矩阵, FrameLabels, 说话人) 四个列表"""
    ids, matrices, labels, speakers = [], [], [], []
    for path in _list_files(feat_dir, "*" + FEATURE_SUFFIX):
        audio_id = _stem(path)
        gold_path = os.path.join(gold_dir, f"{audio_id}.json")
        if not os.path.exists(gold_path):
            logger.warning("%s 没有金标，跳过", audio_id)
            continue
        matrix = read_feature_matrix(path, store_config)
        gold = parse_gold_labels(read_bytes(gold_path), store_config.frame)
        frame_labels = gold.frame_labels
        if matrix.n_frames != frame_labels.n_frames:
            raise LengthMismatch(f"{audio_id}: 特征 {matrix.n_frames} 帧，金标 {frame_labels.n_frames} 帧")
        ids.append(audio_id)
        matrices.append(matrix)
        labels.append(frame_labels)
        speakers.append(gold.speaker)
    return ids, matrices, labels, speakers


def cmd_train(args, config):
    store_config = feature_store_config(config)
    _, matrices, labels, _ = _load_labeled_corpus(args.feat_dir, args.gold_dir, store_config)
    matrices = [select_columns(m, config.feature_set, store_config) for m in matrices]
    logger.info("训练配置: %s", config.to_dict())
    model = train_on_corpus(matrices, labels, config)
    save_model(model, args.model)
    print(f"trained {model.family} on {len(matrices)} utterances "
          f"(features={model.feature_set}, window={model.window}) -> {args.model}")
    return 0


def detect_stress(audio, words, model, config):
    """一句话的检测链：特征 → 逐帧预测 → 词级判定 → 缩放因子"""
    store_config = dataclasses.replace(feature_store_config(config), frame=dataclasses.replace(
        config.frame, sample_rate=audio.sample_rate))
    base = extract_base_features(audio, store_config)
    normalized, _ = normalize_features(base)
    selected = select_columns(normalized, model.feature_set or config.feature_set, store_config)
    frame_preds, _ = predict(model, prepare_inputs(selected, model.norm_stats, model.window))
    decisions = word_level_stress(FrameLabels(frame_preds, store_config.frame), words)
    pitch, energy = base.values[:, 0], base.values[:, 1]
    return build_stress_cues(decisions, pitch, energy, words, store_config.frame,
                             config.clamp, config.duration_scale)


def cmd_detect(args, config):
    model = load_model(args.model)
    audio = read_wav(args.wav)
    words = parse_word_alignment(read_bytes(args.words))
    cues = detect_stress(audio, words, model, config)
    write_bytes_atomic(args.out, serialize_stress_cues(cues))
    print(f"{audio.audio_id}: {len(cues)} stressed words " + " ".join(c.word for c in cues))
    return 0


def evaluation_grid(speakers, matrices, labels, words, config, store_config):
    """
    说话人不相交划分下的特征集 × 窗口 × 模型评测

    返回:
        行列表，每行是 dict(feature_set, window, model, accuracy, f1, post_accuracy)
    """
    train_idx, test_idx = speaker_disjoint_split(speakers, config.test_fraction, config.rng_seed)
    logger.info("评测划分：训练 %d 句，测试 %d 句", len(train_idx), len(test_idx))
    rows = []
    for feature_set in config.eval_feature_sets:
        selected = [select_columns(m, feature_set, store_config) for m in matrices]
        for window in config.eval_windows:
            for family in config.eval_models:
                run_config = config.with_overrides(feature_set=feature_set, window=window, family=family)
                model = train_on_corpus([selected[i] for i in train_idx], [labels[i] for i in train_idx],
                                        run_config)
                frame_pred, frame_true, word_pred, word_gold = [], [], [], []
                for i in test_idx:
                    pred, _ = predict(model, prepare_inputs(selected[i], model.norm_stats, window))
                    frame_pred.append(pred)
                    frame_true.append(labels[i].labels)
                    word_pred += word_level_stress(FrameLabels(pred, labels[i].grid), words[i])
                    word_gold += gold_word_decisions(labels[i], words[i])
                metrics = evaluate(np.concatenate(frame_pred), np.concatenate(frame_true))
                rows.append({
                    "feature_set": feature_set, "window": window, "model": family,
                    "accuracy": metrics.accuracy, "f1": metrics.f1,
                    "post_accuracy": post_accuracy(word_pred, word_gold),
                })
                logger.info("评测 %s/w%d/%s: 准确率=%.3f F1=%.3f", feature_set, window, family,
                            metrics.accuracy, metrics.f1)
    return rows


def format_report(rows):
    """Markdown 表格：特征 × 窗口 × 模型，准确率 / F1 / 词级准确率（百分数）"""
    lines = ["| Features | Window | Model | Accuracy | F1 | Post Accuracy |",
             "|---|---|---|---|---|---|"]
    for row in rows:
        lines.append(f"| {FEATURE_SET_NAMES[row['feature_set']]} | {row['window']} | {row['model'].upper()} "
                     f"| {100 * row['accuracy']:.2f} | {100 * row['f1']:.2f} | {100 * row['post_accuracy']:.2f} |")
    return "\n".join(lines) + "\n"


def cmd_eval(args, config):
    store_config = feature_store_config(config)
    ids, matrices, labels, speakers = _load_labeled_corpus(args.feat_dir, args.gold_dir, store_config)
    words = [parse_word_alignment(read_bytes(os.path.join(args.words_dir, f"{i}.json"))) for i in ids]
    rows = evaluation_grid(speakers, matrices, labels, words, config, store_config)
    table = format_report(rows)
    print(table, end="")
    if args.report:
        write_bytes_atomic(args.report, ("# Stress detection evaluation\n\n" + table).encode("utf-8"))
    return 0


# 提示迁移与轮廓修改

def cmd_transfer(args, config):
    cues = parse_stress_cues(read_bytes(args.cues))
    alignment = parse_mt_alignment(read_bytes(args.alignment))
    target = map_cues(cues, alignment)
    write_bytes_atomic(args.out, serialize_stress_cues(target))
    print(f"{len(cues)} source cues -> {len(target.cues)} target cues, "
          f"{len(target.unmapped_sources)} unmapped")
    return 0


def cmd_modify(args, config):
    contours = parse_token_contours(read_bytes(args.contours))
    cues = clamp_scales(parse_target_cues(read_bytes(args.cues)), config.clamp)
    modified = apply_cues(contours, cues, config.variances)
    write_bytes_atomic(args.out, serialize_modified_contours(modified))
    if args.plot:
        fig = plot_contours(contours, modified)
        fig.savefig(args.plot, dpi=100)
        plt.close(fig)
    print(f"modified {len(modified.applied_cues)} words over {len(modified)} tokens ({config.variances})")
    return 0


# 合成语料

def cmd_synth(args, config):
    corpus = synth_corpus(args.utterances, args.speakers, config.rng_seed, config.frame.sample_rate)
    out = args.out_dir
    truth = {}
    for utt in corpus:
        audio_id = utt.audio.audio_id
        write_wav(os.path.join(out, "wav", f"{audio_id}.wav"), utt.audio)
        write_bytes_atomic(os.path.join(out, "annotations", f"{audio_id}.json"),
                           serialize_annotation_set(utt.annotations))
        write_bytes_atomic(os.path.join(out, "words", f"{audio_id}.json"), serialize_word_alignment(utt.words))
        write_bytes_atomic(os.path.join(out, "mt", f"{audio_id}.json"), serialize_mt_alignment(utt.alignment))
        write_bytes_atomic(os.path.join(out, "contours", f"{audio_id}.json"),
                           serialize_token_contours(utt.contours))
        truth[audio_id] = utt.stressed_words
    write_json_atomic(os.path.join(out, "truth.json"), truth)
    print(f"{len(corpus)} synthetic utterances -> {out}")
    return 0


# 参数解析

def parse_clamp(text):
    """"LO:HI" → (lo, hi)"""
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"缩放范围格式应为 LO:HI，收到 {text!r}") from None
    if not 0 < lo <= hi:
        raise argparse.ArgumentTypeError(f"缩放范围必须满足 0 < LO <= HI: {text}")
    return lo, hi


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML 配置文件")
    common.add_argument("--seed", type=int, help="随机种子")
    common.add_argument("--jobs", type=int, help="并行进程数，-1 表示全部 CPU")
    common.add_argument("--window", type=int, help="上下文窗口（正奇数）")
    common.add_argument("--features", choices=FEATURE_SETS, help="特征集")
    common.add_argument("--model", choices=MODEL_FAMILIES, dest="family", help="分类器")
    common.add_argument("--clamp", type=parse_clamp, help="缩放因子范围 LO:HI")
    common.add_argument("--duration-scale", type=float, help="重音词的时长因子")
    common.add_argument("--fail-fast", action="store_true", help="遇到第一个出错的文件即退出")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v 输出 INFO，-vv 输出 DEBUG")

    parser = argparse.ArgumentParser(prog="stress-transfer", description="语音翻译中的重音检测与迁移")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, *positionals):
        p = sub.add_parser(name, parents=[common], help=help_text)
        for positional in positionals:
            p.add_argument(positional)
        p.set_defaults(func=func)
        return p

    add("features", cmd_features, "提取逐帧特征", "wav_dir", "out_dir")
    add("aggregate", cmd_aggregate, "聚合多标注者区间为金标", "ann_dir", "out_dir")
    add("stats", cmd_stats, "标注语料统计", "ann_dir")
    add("train", cmd_train, "训练重音分类器", "feat_dir", "gold_dir", "model")
    add("detect", cmd_detect, "检测重音词并输出缩放因子", "wav", "words", "model", "out")
    p = add("eval", cmd_eval, "特征集 x 窗口 x 模型评测", "feat_dir", "gold_dir", "words_dir")
    p.add_argument("--report", help="Markdown 报告输出路径，例如 results/evaluation.md")
    add("transfer", cmd_transfer, "按 MT 对齐映射重音提示", "cues", "alignment", "out")
    p = add("modify", cmd_modify, "按提示修改 TTS token 方差", "contours", "cues", "out")
    p.add_argument("--variances", choices=sorted(VARIANCE_MODES), help="修改哪些方差")
    p.add_argument("--plot", help="修改前后轮廓图 (PNG)")
    p = add("synth", cmd_synth, "生成合成语料", "out_dir")
    p.add_argument("--utterances", type=int, default=50)
    p.add_argument("--speakers", type=int, default=10)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")

    try:
        config = load_config(args.config)
    except (StressTransferError, OSError) as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return 1
    try:
        config = config.with_overrides(
            rng_seed=args.seed, jobs=args.jobs, window=args.window, feature_set=args.features,
            family=args.family, clamp=args.clamp, duration_scale=args.duration_scale,
            variances=getattr(args, "variances", None))
    except InvalidConfig as exc:
        print(f"{parser.prog}: {exc}", file=sys.stderr)
        return 2

    try:
        return args.func(args, config)
    except (StressTransferError, OSError) as exc:
        where = getattr(exc, "filename", None) or args.command
        print(f"{where}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
