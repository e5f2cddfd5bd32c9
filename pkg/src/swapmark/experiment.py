"""End-to-end scenario: data, embedding, audits, attacks, re-audits and sweeps.

``run_experiment`` is a pure function of the configuration (and its master
seed) except for the wall-clock fields. Every stage writes its artefacts
under ``run.output_dir``:

    config.echo         the effective configuration
    checkpoints/*.ckpt  watermarked, baseline and reference prompts
    audits/*.json       one AuditReport per audit
    attacks/*.json      one AttackResult per attack
    logs/*.jsonl        training logs
    record.json         the ResultRecord
"""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import data as dt
from . import metrics, toy_clip as tc, verification as vf
from .config import ExperimentConfig
from .watermark import BwapConfig, SwapConfig, apply_trigger, embed_bwap, embed_swap

log = logging.getLogger(__name__)


@dataclass
class ResultRecord:
    config: dict
    mode: str = "swap"
    acc_base: float | None = None
    acc_novel: float | None = None
    hm: float | None = None
    wsr: float | None = None
    p_value: float | None = None
    underflow: bool | None = None
    harmless: float | None = None
    baseline: dict = field(default_factory=dict)   # lambda=0 accuracies
    audits: dict = field(default_factory=dict)     # name -> AuditReport dict
    attacks: list = field(default_factory=list)    # AttackResult dicts
    sweeps: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    failed_stage: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.failed_stage is None

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ResultRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def comparable(self) -> dict:
        """The record without wall-clock fields, for determinism checks."""
        d = self.to_dict()
        d.pop("timings")
        for a in d["attacks"]:
            a.pop("timestamp", None)
        return d

    def attack(self, name: str) -> dict:
        for a in self.attacks:
            if a["attack"] == name:
                return a
        raise KeyError(name)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# building blocks shared with the CLI


@dataclass
class Scenario:
    """Data, split and model derived from a config; everything later stages need."""

    config: ExperimentConfig
    dataset: dt.Dataset
    split: dt.SplitSpec
    train: dt.Dataset          # owner's few-shot base samples
    adversary: dt.Dataset      # disjoint few-shot samples (independent prompt, attacks)
    spare: dt.Dataset          # a third disjoint draw (second adaptive reference)
    base_eval: dt.Dataset      # base samples outside every few-shot draw
    novel: dt.Dataset
    model: tc.DualEncoderModel

    @property
    def base_classes(self) -> list[str]:
        return [self.model.original_classes[c] for c in self.split.base_classes]

    @property
    def novel_classes(self) -> list[str]:
        return [self.model.original_classes[c] for c in self.split.novel_classes]

    def positions(self, d: dt.Dataset, classes) -> np.ndarray:
        names = self.model.original_classes
        return np.array([list(classes).index(names[y]) for y in d.y])

    def oracle(self, prompts: tc.PromptParams) -> tc.ModelOracle:
        return tc.ModelOracle(self.model, prompts)


def dataset_spec(cfg: ExperimentConfig) -> dt.DatasetSpec:
    d = cfg.data
    return dt.DatasetSpec(d.num_classes, d.samples_per_class, d.input_dim, d.cluster_std, cfg.seed_for("data"))


def model_config(cfg: ExperimentConfig) -> tc.ModelConfig:
    m = cfg.model
    return tc.ModelConfig(input_dim=cfg.data.input_dim, feature_dim=m.feature_dim,
                          hidden_dims=(m.hidden_image, m.hidden_text), token_dim=m.token_dim,
                          prompt_len_visual=m.prompt_len_visual, prompt_len_text=m.prompt_len_text,
                          temperature=m.temperature, rng_seed=cfg.seed_for("model"), prompt_site=m.prompt_site,
                          ground_steps=m.ground_steps, ground_lr=m.ground_lr, token_spread=m.token_spread)


def swap_config(cfg: ExperimentConfig, **kw) -> SwapConfig:
    s = cfg.swap
    base = SwapConfig(epsilon=s.epsilon, lambda_=s.lambda_, verification_classes=tuple(s.verification),
                      epochs=s.epochs, learning_rate=s.learning_rate, batch_size=s.batch_size,
                      seed=cfg.seed_for("swap"))
    return replace(base, **kw)


def bwap_config(cfg: ExperimentConfig) -> BwapConfig:
    b = cfg.bwap
    return BwapConfig.default(cfg.data.input_dim, b.trigger_patch, b.trigger_value, target_class=b.target,
                              poison_rate=b.poison_rate, epochs=b.epochs, learning_rate=b.learning_rate,
                              seed=cfg.seed_for("bwap"))


def pgd_config(cfg: ExperimentConfig, epsilon: float | None = None) -> atk.PgdConfig:
    return atk.PgdConfig(epsilon_inf=cfg.attacks.pgd_epsilon if epsilon is None else epsilon,
                         steps=cfg.attacks.pgd_steps)


def _disjoint_shots(pool: dt.Dataset, shots: int, seed: int) -> tuple[dt.Dataset, dt.Dataset]:
    picked = dt.sample_few_shot(pool, shots, seed)
    return picked, dt.held_out(pool, picked)


def build_scenario(cfg: ExperimentConfig, model: tc.DualEncoderModel | None = None) -> Scenario:
    """Regenerate data and splits from the config; ``model`` skips rebuilding the backbone."""
    dataset = dt.generate_dataset(dataset_spec(cfg))
    base, novel, split = dt.split_base_novel(dataset, cfg.data.base_fraction, cfg.seed_for("split"))
    train, rest = _disjoint_shots(base, cfg.data.shots, cfg.seed_for("shots"))
    adversary, rest = _disjoint_shots(rest, cfg.data.shots, cfg.seed_for("adversary-shots"))
    spare, rest = _disjoint_shots(rest, cfg.data.shots, cfg.seed_for("spare-shots"))
    if model is None:
        model = tc.build_model(model_config(cfg), dataset.means)
    elif model.config != model_config(cfg):
        raise ValueError("checkpoint model does not match the configured model")
    return Scenario(cfg, dataset, split, train, adversary, spare, rest, novel, model)


def _audit_pool(sc: Scenario) -> np.ndarray:
    return sc.novel.x


def swap_audit(sc: Scenario, prompts, verification, reference=None, seed_tag="audit") -> vf.AuditReport:
    a = sc.config.audit
    return vf.repeated_swap_audit(sc.oracle(prompts), _audit_pool(sc), list(verification), sc.novel_classes,
                                  m=a.m, repeats=a.repeats, seed=sc.config.seed_for(seed_tag),
                                  reference=reference, tau_thr=a.tau_thr, alpha=a.alpha)


def swap_metrics(sc: Scenario, prompts, verification) -> dict:
    """WSR on the novel pool plus base and novel accuracy (verification classes as candidates)."""
    o = sc.oracle(prompts)
    extra = list(verification)
    ab = metrics.acc(o, sc.base_eval.x, sc.positions(sc.base_eval, sc.base_classes), sc.base_classes, extra)
    an = metrics.acc(o, sc.novel.x, sc.positions(sc.novel, sc.novel_classes), sc.novel_classes, extra)
    return dict(wsr=vf.wsr(o, _audit_pool(sc), extra, sc.novel_classes), acc_base=ab, acc_novel=an)


def bwap_metrics(sc: Scenario, prompts, bw: BwapConfig) -> dict:
    o = sc.oracle(prompts)
    extra = [bw.target_class]
    ab = metrics.acc(o, sc.base_eval.x, sc.positions(sc.base_eval, sc.base_classes), sc.base_classes, extra)
    an = metrics.acc(o, sc.novel.x, sc.positions(sc.novel, sc.novel_classes), sc.novel_classes, extra)
    trig = metrics.predictions(o, apply_trigger(sc.novel.x, bw), sc.novel_classes, extra)
    return dict(wsr=float(np.mean(trig == len(sc.novel_classes))), acc_base=ab, acc_novel=an)


def bwap_audit(sc: Scenario, prompts, bw: BwapConfig) -> vf.AuditReport:
    a = sc.config.audit
    rng = np.random.default_rng(sc.config.seed_for("bwap-audit"))
    idx = np.sort(rng.choice(len(sc.novel), size=a.m, replace=False))
    benign = sc.novel.x[idx]
    return vf.bwap_verify(sc.oracle(prompts), benign, apply_trigger(benign, bw), bw.target_class,
                          sc.novel_classes, tau_thr=a.bwap_tau_thr, alpha=a.alpha)


# ---------------------------------------------------------------------------
# the scenario


class _Stages:
    """Runs named stages, timing each and remembering which one failed."""

    def __init__(self, record: ResultRecord):
        self.record = record
        self.current = None

    def __call__(self, name: str):
        self.current = name
        return _Timer(self.record.timings, name)


class _Timer:
    def __init__(self, timings: dict, name: str):
        self.timings, self.name = timings, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)

    def __exit__(self, *exc):
        self.timings[self.name] = round(time.perf_counter() - self.t0, 4)
        return False


def run_experiment(config: ExperimentConfig, persist: bool = True) -> ResultRecord:
    """Run the whole scenario; on failure the partial record names the failed stage."""
    config.validate()
    record = ResultRecord(config=config.to_dict(), mode=config.run.mode)
    out = Path(config.run.output_dir)
    stage = _Stages(record)
    try:
        if persist:
            for sub in ("checkpoints", "audits", "attacks", "logs", "plots"):
                (out / sub).mkdir(parents=True, exist_ok=True)
            config.save(out / "config.echo")
        with stage("data"):
            sc = build_scenario(config)
            if persist:
                dt.save_dataset(sc.dataset, out / "dataset.txt")
        if config.run.mode == "swap":
            _run_swap(sc, record, stage, out if persist else None)
        else:
            _run_bwap(sc, record, stage, out if persist else None)
    except Exception as exc:  # noqa: BLE001 - the record names the stage instead of raising
        record.failed_stage = stage.current
        record.error = f"{type(exc).__name__}: {exc}"
        log.exception("stage %s failed", stage.current)
    if persist:
        out.mkdir(parents=True, exist_ok=True)
        (out / "record.json").write_text(record.to_json())
    return record


def _save(out, kind: str, name: str, payload) -> None:
    if out is None:
        return
    if kind == "checkpoints":
        model, prompts, extra = payload
        tc.save_checkpoint(model, prompts, out / kind / f"{name}.ckpt", extra)
    elif kind == "logs":
        payload.to_jsonl(out / kind / f"{name}.jsonl")
    else:
        (out / kind / f"{name}.json").write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True))


def _run_swap(sc: Scenario, record: ResultRecord, stage, out) -> None:
    cfg = sc.config
    T = list(cfg.swap.verification)
    zero = tc.PromptParams.zeros(sc.model.config)
    sw = swap_config(cfg)

    with stage("embed"):
        wm, wm_log = embed_swap(sc.model, zero, sc.train, sw)
        baseline, base_log = embed_swap(sc.model, zero, sc.train, replace(sw, lambda_=0.0))
        indep, indep_log = embed_swap(sc.model, zero, sc.adversary,
                                      replace(sw, lambda_=0.0, seed=cfg.seed_for("independent")))
        record.notes.update(swap_converged=wm_log.converged, swap_note=wm_log.note)
        for name, p, lg in (("watermarked", wm, wm_log), ("baseline", baseline, base_log),
                            ("independent", indep, indep_log)):
            _save(out, "checkpoints", name, (sc.model, p, {"verification": T, "mode": "swap"}))
            _save(out, "logs", name, lg)

    with stage("audit"):
        m = swap_metrics(sc, wm, T)
        record.acc_base, record.acc_novel, record.wsr = m["acc_base"], m["acc_novel"], m["wsr"]
        record.hm = metrics.harmonic_mean(m["acc_base"], m["acc_novel"])
        b = swap_metrics(sc, baseline, T)
        record.baseline = dict(acc_base=b["acc_base"], acc_novel=b["acc_novel"],
                               hm=metrics.harmonic_mean(b["acc_base"], b["acc_novel"]))
        audits = {
            "watermarked": swap_audit(sc, wm, T),
            "independent_prompt": swap_audit(sc, indep, T),
            "independent_classes": swap_audit(sc, wm, cfg.audit.independent_classes),
        }
        for name, rep in audits.items():
            d = rep.to_dict()
            # exact-match rate on the audited sample (first repeat) and on the whole pool
            d["wsr"] = float(np.mean(np.asarray(rep.distances) == 0))
            d["pool_wsr"] = vf.wsr(sc.oracle(wm if name != "independent_prompt" else indep), _audit_pool(sc),
                                   rep.params["verification"], sc.novel_classes)
            d["seed"] = cfg.run.seed
            record.audits[name] = d
            _save(out, "audits", name, d)
        record.p_value = audits["watermarked"].p_value
        record.underflow = audits["watermarked"].underflow
        record.harmless = metrics.harmless_degree(
            sc.oracle(wm), sc.oracle(indep), sc.novel.x, sc.positions(sc.novel, sc.novel_classes),
            sc.novel_classes, T)

    refs = dict(independent=indep)
    for name in cfg.attacks.run:
        with stage(f"attack:{name}"):
            res = SWAP_ATTACKS[name](sc, wm, refs)
            record.attacks.append(res.to_dict())
            _save(out, "attacks", name, res.to_dict())

    if cfg.run.sweeps:
        with stage("sweeps"):
            record.sweeps.update(sensitivity_sweeps(sc))
            _save(out, "attacks", "sensitivity", record.sweeps)


def _run_bwap(sc: Scenario, record: ResultRecord, stage, out) -> None:
    cfg = sc.config
    bw = bwap_config(cfg)
    zero = tc.PromptParams.zeros(sc.model.config)
    sw = swap_config(cfg, lambda_=0.0)

    with stage("embed"):
        wm, wm_log = embed_bwap(sc.model, zero, sc.train, bw)
        baseline, _ = embed_swap(sc.model, zero, sc.train, sw)
        indep, _ = embed_swap(sc.model, zero, sc.adversary, replace(sw, seed=cfg.seed_for("independent")))
        for name, p in (("watermarked", wm), ("baseline", baseline), ("independent", indep)):
            _save(out, "checkpoints", name, (sc.model, p, {"target": bw.target_class, "mode": "bwap"}))
        _save(out, "logs", "watermarked", wm_log)

    with stage("audit"):
        m = bwap_metrics(sc, wm, bw)
        record.acc_base, record.acc_novel, record.wsr = m["acc_base"], m["acc_novel"], m["wsr"]
        record.hm = metrics.harmonic_mean(m["acc_base"], m["acc_novel"])
        b = bwap_metrics(sc, baseline, bw)
        record.baseline = dict(acc_base=b["acc_base"], acc_novel=b["acc_novel"],
                               hm=metrics.harmonic_mean(b["acc_base"], b["acc_novel"]))
        for name, p in (("watermarked", wm), ("independent_prompt", indep)):
            d = bwap_audit(sc, p, bw).to_dict()
            d["wsr"] = bwap_metrics(sc, p, bw)["wsr"]
            d["seed"] = cfg.run.seed
            record.audits[name] = d
            _save(out, "audits", name, d)
        record.p_value = record.audits["watermarked"]["p_value"]
        record.underflow = record.audits["watermarked"]["underflow"]
        # harm shows up on triggered inputs, which the watermarked prompt sends to the target
        trig = apply_trigger(sc.novel.x, bw)
        record.harmless = metrics.harmless_degree(
            sc.oracle(wm), sc.oracle(indep), trig, sc.positions(sc.novel, sc.novel_classes),
            sc.novel_classes, [bw.target_class])

    for name in cfg.attacks.run:
        if name not in ("finetune", "prune"):
            record.notes[f"attack:{name}"] = "skipped: defined for the sequential watermark only"
            continue
        with stage(f"attack:{name}"):
            res = _bwap_attack(sc, wm, bw, name)
            record.attacks.append(res.to_dict())
            _save(out, "attacks", name, res.to_dict())


# ---------------------------------------------------------------------------
# attacks against the sequential watermark


def _removal_result(sc, name, params, wm, attacked, T, extra_post=None) -> atk.AttackResult:
    pre = swap_metrics(sc, wm, T)
    pre["p_value"] = swap_audit(sc, wm, T).p_value
    post = swap_metrics(sc, attacked, T)
    post["p_value"] = swap_audit(sc, attacked, T, seed_tag="re-audit").p_value
    post.update(extra_post or {})
    return atk.AttackResult(name, params=params, pre=pre, post=post,
                            seeds=dict(master=sc.config.run.seed))


def _finetune(sc: Scenario, wm, refs) -> atk.AttackResult:
    a = sc.config.attacks
    T = list(sc.config.swap.verification)
    epochs = max(a.finetune_epochs, sc.config.sweep.finetune_epochs if sc.config.run.sweeps else 0)
    p, curve = wm, [dict(epoch=0, **swap_metrics(sc, wm, T))]
    attacked = wm if a.finetune_epochs == 0 else None
    for e in range(1, epochs + 1):
        # one epoch at a time so the curve shares its trajectory with the reported attack
        p = atk.finetune_attack(sc.model, p, sc.adversary, epochs=1, lr=a.finetune_lr,
                                batch_size=a.batch_size, seed=sc.config.seed_for(f"finetune-{e}"))
        curve.append(dict(epoch=e, **swap_metrics(sc, p, T)))
        if e == a.finetune_epochs:
            attacked = p
    res = _removal_result(sc, "finetune", dict(epochs=a.finetune_epochs, lr=a.finetune_lr,
                                               batch_size=a.batch_size), wm, attacked, T)
    res.post["curve"] = curve
    return res


def _prune(sc: Scenario, wm, refs) -> atk.AttackResult:
    T = list(sc.config.swap.verification)
    curve = [dict(fraction=f, **swap_metrics(sc, atk.prune_attack(wm, f), T))
             for f in sc.config.attacks.prune_fractions]
    res = atk.AttackResult("prune", params=dict(fractions=list(sc.config.attacks.prune_fractions)),
                           pre=swap_metrics(sc, wm, T), post=dict(curve=curve),
                           seeds=dict(master=sc.config.run.seed))
    return res


def _overwrite(sc: Scenario, wm, refs) -> atk.AttackResult:
    a = sc.config.attacks
    T = list(sc.config.swap.verification)
    new = list(a.overwrite_classes)
    sw = swap_config(sc.config, seed=sc.config.seed_for("overwrite"))
    attacked = atk.overwrite_attack(sc.model, wm, sc.adversary, new, sw, original_verification=T)
    extra = dict(new_wsr=vf.wsr(sc.oracle(attacked), _audit_pool(sc), new, sc.novel_classes))
    res = _removal_result(sc, "overwrite", dict(new_verification=new), wm, attacked, T, extra)
    res.timestamp = time.time()
    return res


def _unlearn(sc: Scenario, wm, refs) -> atk.AttackResult:
    a = sc.config.attacks
    T = list(sc.config.swap.verification)
    attacked = atk.unlearn_attack(sc.model, wm, sc.adversary, T, lambda_=a.unlearn_lambda,
                                  epochs=a.unlearn_epochs, lr=a.finetune_lr, epsilon=sc.config.swap.epsilon,
                                  batch_size=a.batch_size, seed=sc.config.seed_for("unlearn"))
    return _removal_result(sc, "unlearn", dict(lambda_=a.unlearn_lambda, epochs=a.unlearn_epochs), wm, attacked, T)


def _claim_samples(sc: Scenario):
    rng = np.random.default_rng(sc.config.seed_for("claim-samples"))
    idx = np.sort(rng.choice(len(sc.novel), size=sc.config.audit.m, replace=False))
    return sc.novel.x[idx], sc.positions(sc.novel, sc.novel_classes)[idx]


def _pgd(sc: Scenario, wm, refs) -> atk.AttackResult:
    """False claim crafted on the promptless backbone; the owner's model is the victim."""
    M = list(sc.config.attacks.adversary_classes)
    x, y = _claim_samples(sc)
    backbone = tc.PromptParams.zeros(sc.model.config)
    pc = pgd_config(sc.config)
    adv = atk.pgd_false_claim((sc.model, backbone), x, pc, objective="order", verification=M,
                              epsilon=sc.config.swap.epsilon)
    adv_ce = atk.pgd_false_claim((sc.model, backbone), x, pc, objective="ce", labels=y,
                                 classes=sc.novel_classes)
    match = atk.sequence_match(M, sc.novel_classes)
    asr = dict(reference=atk.asr(sc.oracle(backbone), adv, match),
               victim=atk.asr(sc.oracle(wm), adv, match),
               reference_ce=atk.asr(sc.oracle(backbone), adv_ce, atk.misclassified(y, sc.novel_classes)))
    return atk.AttackResult("pgd", params=dict(epsilon_inf=pc.epsilon_inf, steps=pc.steps,
                                               step_size=pc.step_size, verification=M),
                            asr=asr, seeds=dict(master=sc.config.run.seed))


def _adaptive(sc: Scenario, wm, refs) -> atk.AttackResult:
    """Joint attack on two independently tuned prompts; the owner's model is the victim."""
    M = list(sc.config.attacks.adversary_classes)
    x, y = _claim_samples(sc)
    zero = tc.PromptParams.zeros(sc.model.config)
    for name, shots in (("independent", sc.adversary), ("spare", sc.spare)):
        if name not in refs:
            sw = swap_config(sc.config, lambda_=0.0, seed=sc.config.seed_for(name))
            refs[name], _ = embed_swap(sc.model, zero, shots, sw)
    r1, r2 = refs["independent"], refs["spare"]
    pc = pgd_config(sc.config)
    adv = atk.adaptive_false_claim([(sc.model, r1), (sc.model, r2)], x, y, sc.novel_classes, M, pc,
                                   epsilon=sc.config.swap.epsilon)
    match = atk.sequence_match(M, sc.novel_classes)
    asr = dict(references=[atk.asr(sc.oracle(r), adv, match) for r in (r1, r2)],
               victim=atk.asr(sc.oracle(wm), adv, match))
    asr["reference"] = min(asr["references"])
    return atk.AttackResult("adaptive", params=dict(epsilon_inf=pc.epsilon_inf, steps=pc.steps, verification=M),
                            asr=asr, seeds=dict(master=sc.config.run.seed))


SWAP_ATTACKS = dict(finetune=_finetune, prune=_prune, overwrite=_overwrite, unlearn=_unlearn,
                    pgd=_pgd, adaptive=_adaptive)


def _bwap_attack(sc: Scenario, wm, bw: BwapConfig, name: str) -> atk.AttackResult:
    a = sc.config.attacks
    pre = bwap_metrics(sc, wm, bw)
    if name == "finetune":
        attacked = atk.finetune_attack(sc.model, wm, sc.adversary, epochs=a.finetune_epochs, lr=a.finetune_lr,
                                       batch_size=a.batch_size, seed=sc.config.seed_for("finetune"))
        return atk.AttackResult(name, params=dict(epochs=a.finetune_epochs), pre=pre,
                                post=bwap_metrics(sc, attacked, bw), seeds=dict(master=sc.config.run.seed))
    curve = [dict(fraction=f, **bwap_metrics(sc, atk.prune_attack(wm, f), bw)) for f in a.prune_fractions]
    return atk.AttackResult(name, params=dict(fractions=list(a.prune_fractions)), pre=pre,
                            post=dict(curve=curve), seeds=dict(master=sc.config.run.seed))


# ---------------------------------------------------------------------------
# sensitivity


def sensitivity_sweeps(sc: Scenario) -> dict:
    """Re-embed with each margin and each loss weight; WSR and accuracies per setting."""
    cfg = sc.config
    T = list(cfg.swap.verification)
    zero = tc.PromptParams.zeros(sc.model.config)
    out = {"epsilon": [], "lambda": []}
    for eps in cfg.sweep.epsilons:
        p, _ = embed_swap(sc.model, zero, sc.train, swap_config(cfg, epsilon=eps))
        out["epsilon"].append(dict(value=eps, **swap_metrics(sc, p, T)))
    for lam in cfg.sweep.lambdas:
        p, _ = embed_swap(sc.model, zero, sc.train, swap_config(cfg, lambda_=lam))
        out["lambda"].append(dict(value=lam, **swap_metrics(sc, p, T)))
    return out
