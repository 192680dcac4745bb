"""Benchmark scoring, robustness/stability analyses, and correlation stats.

An instance is correct iff the caption embedding is strictly most similar to
the positive statement among all candidates; ties count as incorrect.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .aggregator import aggregate, dot_similarity, similarity
from .errors import ArgumentError, ConfigError, NumericError
from .fusion import fuse
from .trainer import train_aggregator


@dataclass
class EvalReport:
    overall_accuracy: float                  # percent
    per_category: dict                       # category -> (accuracy %, count)
    n_instances: int
    fingerprint: dict = field(default_factory=dict)

    def to_txt(self):
        lines = [f"instances\t{self.n_instances}",
                 f"overall_accuracy\t{self.overall_accuracy:.2f}"]
        for cat in sorted(self.per_category):
            acc, count = self.per_category[cat]
            lines.append(f"{cat}\t{acc:.2f}\t(n={count})")
        for key in sorted(self.fingerprint):
            lines.append(f"# {key}={self.fingerprint[key]}")
        return "\n".join(lines) + "\n"

    def to_tsv(self):
        lines = ["category\tn\taccuracy"]
        lines.append(f"__overall__\t{self.n_instances}\t{self.overall_accuracy:.4f}")
        for cat in sorted(self.per_category):
            acc, count = self.per_category[cat]
            lines.append(f"{cat}\t{count}\t{acc:.4f}")
        return "\n".join(lines) + "\n"


@dataclass
class CorrelationResult:
    r: float
    p: float
    n: int

    def to_record(self):
        return f"r\t{self.r:.6f}\np\t{self.p:.6g}\nn\t{self.n}\n"


def score_instance(cap, pos, negs, sim=similarity):
    """(correct, margin) under the strict similarity-argmax rule."""
    if len(negs) == 0:
        raise ArgumentError("an instance needs at least one negative")
    s_pos = sim(cap, pos)
    s_negs = [sim(cap, neg) for neg in negs]
    margin = s_pos - max(s_negs)
    return margin > 0.0, margin


class _EmbedCache:
    """Embed each distinct text once per (encoder, strategy, params)."""

    def __init__(self, encoder, strategy, params):
        self.encoder = encoder
        self.strategy = strategy
        self.params = params
        self._cache = {}

    def __call__(self, text):
        if text not in self._cache:
            h = self.encoder(text)
            c_text = fuse(h, self.strategy)
            self._cache[text] = aggregate(c_text, h.mask, self.params)
        return self._cache[text]


def evaluate(bench, encoder, strategy, params, ckpt_meta=None,
             fingerprint_policy="warn", skip_errors=False, use_dot=False):
    """Score a benchmark; returns an EvalReport with per-category breakdown.

    ``ckpt_meta`` is the checkpoint's training fingerprint; when it names a
    different encoder or fusion strategy than this evaluation uses, the
    mismatch is a warning (default), an error, or ignored per
    ``fingerprint_policy`` in {"warn", "error", "off"}.
    """
    if not bench:
        raise ArgumentError("benchmark is empty")
    fingerprint = {"encoder_id": encoder.encoder_id, "fusion": strategy.name}
    if ckpt_meta and fingerprint_policy != "off":
        for key in ("encoder_id", "fusion"):
            trained = ckpt_meta.get(key)
            if trained is not None and trained != fingerprint[key]:
                msg = (f"checkpoint was trained for {key}={trained!r} but "
                       f"evaluation uses {fingerprint[key]!r}")
                if fingerprint_policy == "error":
                    raise ConfigError(msg)
                import warnings
                warnings.warn(msg, stacklevel=2)

    sim = dot_similarity if use_dot else similarity
    embed = _EmbedCache(encoder, strategy, params)
    correct_by_cat = {}
    count_by_cat = {}
    n_scored = 0
    n_correct = 0
    for inst in bench:
        try:
            cap = embed(inst.caption)
            pos = embed(inst.positive)
            negs = [embed(neg) for neg in inst.negatives]
        except Exception as exc:
            if skip_errors:
                continue
            raise ArgumentError(
                f"failed to embed instance {inst.id!r}: {exc}") from exc
        ok, _margin = score_instance(cap, pos, negs, sim=sim)
        n_scored += 1
        count_by_cat[inst.category] = count_by_cat.get(inst.category, 0) + 1
        if ok:
            n_correct += 1
            correct_by_cat[inst.category] = correct_by_cat.get(inst.category, 0) + 1
    if n_scored == 0:
        raise ArgumentError("no instance could be scored")
    per_category = {
        cat: (100.0 * correct_by_cat.get(cat, 0) / count, count)
        for cat, count in count_by_cat.items()}
    return EvalReport(overall_accuracy=100.0 * n_correct / n_scored,
                      per_category=per_category, n_instances=n_scored,
                      fingerprint=fingerprint)


def _seeded_derangement(n, rng):
    # rejection sampling; expected ~e tries
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def shuffle_baseline(bench, encoder, strategy, params, seed=0):
    """Accuracy after decoupling captions from their statement sets.

    Captions are permuted by a seeded derangement, so every instance is scored
    against an unrelated caption; a sound protocol collapses to chance level.
    """
    if len(bench) < 2:
        raise ArgumentError("shuffle baseline needs at least two instances")
    rng = np.random.default_rng([seed, 0x5])
    perm = _seeded_derangement(len(bench), rng)
    embed = _EmbedCache(encoder, strategy, params)
    n_correct = 0
    for i, inst in enumerate(bench):
        cap = embed(bench[perm[i]].caption)
        pos = embed(inst.positive)
        negs = [embed(neg) for neg in inst.negatives]
        ok, _ = score_instance(cap, pos, negs)
        if ok:
            n_correct += 1
    return 100.0 * n_correct / len(bench)


def stability_runs(pairs, encoder, bench, cfg, seeds, strategy_name=None):
    """Repeat training with different seeds; report scores and max spread."""
    from dataclasses import replace as _replace
    if len(seeds) < 2:
        raise ArgumentError("stability analysis needs at least two seeds")
    scores = []
    for seed in seeds:
        run_cfg = _replace(cfg, seed=seed)
        if strategy_name is not None:
            run_cfg = _replace(run_cfg, fusion=strategy_name)
        try:
            params, weights, _history = train_aggregator(pairs, encoder, run_cfg)
        except Exception as exc:
            raise ArgumentError(f"training failed for seed {seed}: {exc}") from exc
        strategy, _ = _trained_strategy(run_cfg, weights, encoder, pairs)
        report = evaluate(bench, encoder, strategy, params)
        scores.append(report.overall_accuracy)
    return scores, max(scores) - min(scores)


def _trained_strategy(cfg, weights, encoder, pairs):
    from .trainer import _resolve_strategy, replace_weights
    probe = encoder(pairs[0].caption_a)
    strategy, _ = _resolve_strategy(cfg, probe.L)
    if weights is not None:
        strategy = replace_weights(strategy, weights)
    return strategy, weights


def _betacf(a, b, x, max_iter=300, eps=1e-14):
    """Continued fraction for the regularized incomplete beta function."""
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise NumericError("incomplete beta continued fraction did not converge")


def _betai(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x < 0.0 or x > 1.0:
        raise ArgumentError("incomplete beta argument outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log(1.0 - x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t, df):
    """Two-sided tail probability of Student's t with ``df`` dof."""
    if df < 1:
        raise ArgumentError("degrees of freedom must be >= 1")
    x = df / (df + t * t)
    return _betai(df / 2.0, 0.5, x)


def pearson(xs, ys):
    """Pearson r with a two-sided Student-t p-value (n - 2 dof)."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ArgumentError("pearson needs two equal-length 1-D series")
    n = xs.size
    if n < 3:
        raise ArgumentError("pearson needs at least 3 samples for a p-value")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    vx = float(xc @ xc)
    vy = float(yc @ yc)
    if vx == 0.0 or vy == 0.0:
        raise NumericError("zero variance in a correlation input")
    r = float(xc @ yc) / math.sqrt(vx * vy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = student_t_sf(abs(t), n - 2)
    return CorrelationResult(r=r, p=p, n=n)
