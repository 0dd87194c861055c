"""Adversarial attacks on chunk scorers.

All attacks perturb whole-video pixel tensors inside an eps-ball around the
original (linf or l2) intersected with [0, 1], and never touch frames beyond
the last full chunk. The shared objective is the signed score sum

    vad objective = sum_i Y_i * S_i,   Y_i = +1 normal chunk / -1 abnormal

whose ascent pushes normal chunks abnormal and abnormal chunks normal at the
same time. Because chunks are pixel-disjoint, one ascent step equals the
per-chunk rule "move chunk i by Y_i * alpha * sign(grad S_i)".

Families:
    pgd_vad     fixed-step sign ascent
    apgd_vad    momentum + step halving at budget-fraction checkpoints
                (0.22, then intervals shrinking by 0.03, floor 0.06), best
                iterate retained
    square_vad  gradient-free random-square search, improving proposals only,
                query count hard-capped at iters
    a3_vad      batch attack: restart rounds seeded from a bank of previously
                successful directions, plus budget reallocation away from
                videos improving below the batch median after a warmup
    mil_pgd     sign ascent on the video-level MIL loss (aggregated score)

A query is one model evaluation (a gradient step counts as one). Every result
is wrapped in an AttackResult whose constructor re-checks the ball and range
invariants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from robustvad.errors import ConfigurationError, ContractError, NumericError
from robustvad.scorer.aggregate import AggregatorKind, aggregate_backward, aggregate_with_cache
from robustvad.scorer.losses import MilLoss, bce, bce_grad, loss_and_input_gradient
from robustvad.scorer.network import ChunkScorer
from robustvad.videostore.model import Video, chunk_any_labels

ATTACK_FAMILIES = ("pgd", "apgd", "square", "a3", "mil_pgd")
BALL_TOL = 1e-9


def parse_eps(text) -> float:
    """Accept 'x/255' fractions or plain decimals."""
    if isinstance(text, (int, float)):
        value = float(text)
    else:
        s = str(text).strip()
        if "/" in s:
            num, den = s.split("/", 1)
            try:
                value = float(num) / float(den)
            except (ValueError, ZeroDivisionError) as exc:
                raise ConfigurationError(f"bad eps {text!r}") from exc
        else:
            try:
                value = float(s)
            except ValueError as exc:
                raise ConfigurationError(f"bad eps {text!r}") from exc
    if not math.isfinite(value) or value < 0:
        raise ConfigurationError(f"eps must be finite and >= 0, got {text!r}")
    return value


def format_eps(eps: float) -> str:
    """Canonical decimal form: 10 significant digits."""
    return f"{eps:.10g}"


@dataclass(frozen=True)
class AttackConfig:
    family: str = "pgd"
    eps: float = 0.5 / 255
    iters: int = 10
    alpha: float | None = None  # None -> 2.5 * eps / iters
    norm: str = "linf"
    restarts: int = 1
    seed: int = 0
    osd_warmup: float = 0.25  # a3 only: budget fraction before discarding

    def __post_init__(self):
        if self.family not in ATTACK_FAMILIES:
            raise ConfigurationError(f"unknown attack family {self.family!r}")
        if self.norm not in ("linf", "l2"):
            raise ConfigurationError(f"norm must be linf or l2, got {self.norm!r}")
        if self.eps < 0 or not math.isfinite(self.eps):
            raise ConfigurationError("eps must be finite and >= 0")
        if self.iters < 0:
            raise ConfigurationError("iters must be >= 0")
        if self.restarts < 1:
            raise ConfigurationError("restarts must be >= 1")
        if not 0.0 <= self.osd_warmup <= 1.0:
            raise ConfigurationError("osd_warmup must be in [0, 1]")

    def step_size(self) -> float:
        if self.alpha is not None:
            return self.alpha
        return 2.5 * self.eps / max(1, self.iters)


@dataclass
class AttackResult:
    video: Video  # adversarial pixels, original labels
    original_pixels: np.ndarray = field(repr=False)
    config: AttackConfig
    objective_trace: list[float]
    queries: int
    success: np.ndarray  # per-chunk bool: score crossed 0.5 in attack direction
    best_objective: float

    def __post_init__(self):
        delta = self.video.pixels - self.original_pixels
        norm = perturbation_norm(delta, self.config.norm)
        if norm > self.config.eps + BALL_TOL:
            raise ContractError(
                f"attack left the eps-ball: |delta|_{self.config.norm} = {norm} > {self.config.eps}"
            )
        if self.video.pixels.min() < 0.0 or self.video.pixels.max() > 1.0:
            raise ContractError("adversarial pixels escaped [0, 1]")


def perturbation_norm(delta: np.ndarray, norm: str) -> float:
    if norm == "linf":
        return float(np.abs(delta).max()) if delta.size else 0.0
    return float(np.sqrt(np.sum(delta * delta)))


def project(x: np.ndarray, x0: np.ndarray, eps: float, norm: str) -> np.ndarray:
    """Project onto {x : |x - x0|_norm <= eps} intersected with [0, 1]^n."""
    if norm == "linf":
        out = np.clip(x, x0 - eps, x0 + eps)
    else:
        delta = x - x0
        n = np.sqrt(np.sum(delta * delta))
        if n > eps:
            delta = delta * (eps / n) if eps > 0 else np.zeros_like(delta)
        out = x0 + delta
    return np.clip(out, 0.0, 1.0)


def y_signs_from_frame_labels(frame_labels: np.ndarray, chunk_size: int) -> np.ndarray:
    """+1 for normal chunks, -1 for chunks containing any abnormal frame."""
    chunk_labels = chunk_any_labels(frame_labels, chunk_size)
    return 1.0 - 2.0 * chunk_labels.astype(np.float64)


def _check_finite(arr, trace):
    if not np.all(np.isfinite(arr)):
        raise NumericError("non-finite value during attack", trace=list(trace))


# --------------------------------------------------------------------------
# objectives (value + gradient adapters over a model)

class VadObjective:
    """sum_i Y_i * S_i over a model exposing chunk_scores / chunk_scores_grad."""

    def __init__(self, model, y_signs: np.ndarray):
        y = np.asarray(y_signs, dtype=np.float64)
        if not np.isin(y, (-1.0, 1.0)).all():
            raise ContractError("y_signs must be +-1")
        self.model = model
        self.y = y

    def value(self, pixels):
        """Returns (objective, chunk scores): one model query."""
        s = self.model.chunk_scores(pixels)
        return float(self.y @ s), s

    def value_and_grad(self, pixels):
        """Returns (objective, gradient, chunk scores): one model query."""
        s = self.model.chunk_scores(pixels)
        grad = self.model.chunk_scores_grad(pixels, self.y)
        return float(self.y @ s), grad, s

    def success_from_scores(self, s: np.ndarray) -> np.ndarray:
        return np.where(self.y > 0, s > 0.5, s < 0.5)


class MilObjective:
    """BCE(aggregate(S), y): the video-level loss the weak training minimizes."""

    def __init__(self, model, y: int, kind: AggregatorKind):
        if y not in (0, 1):
            raise ContractError("video label must be 0/1")
        self.model = model
        self.y = y
        self.kind = kind
        if kind.name == "abmil" and not isinstance(model, ChunkScorer):
            raise ContractError("abmil mil attack needs a ChunkScorer model")

    def value(self, pixels):
        s = self.model.chunk_scores(pixels)
        if self.kind.name == "abmil":
            from robustvad.scorer.losses import loss_value

            return loss_value(self.model.params, pixels, MilLoss(self.y, self.kind)), s
        a, _ = aggregate_with_cache(s, self.kind)
        return bce(a, self.y), s

    def value_and_grad(self, pixels):
        if isinstance(self.model, ChunkScorer):
            f, g = loss_and_input_gradient(self.model.params, pixels,
                                           MilLoss(self.y, self.kind))
            return f, g, None
        s = self.model.chunk_scores(pixels)
        a, cache = aggregate_with_cache(s, self.kind)
        ds, _, _ = aggregate_backward(cache, float(bce_grad(a, self.y)))
        return bce(a, self.y), self.model.chunk_scores_grad(pixels, ds), s

    def success_from_scores(self, s: np.ndarray) -> np.ndarray:
        # the attack pushes scores away from the video label
        return s < 0.5 if self.y == 1 else s > 0.5


# --------------------------------------------------------------------------
# PGD core

def _pgd_core(objective, x0, cfg: AttackConfig, budget: int,
              init: np.ndarray | None = None, alpha: float | None = None):
    """Sign-ascent PGD spending exactly `budget` queries: budget - 1 gradient
    steps plus one final evaluation. Returns (x, f, scores, trace, queries)."""
    alpha = cfg.step_size() if alpha is None else alpha
    x = x0.copy() if init is None else project(init, x0, cfg.eps, cfg.norm)
    trace: list[float] = []
    queries = 0
    for _ in range(max(0, budget - 1)):
        f, g, _ = objective.value_and_grad(x)
        queries += 1
        _check_finite(g, trace)
        _check_finite([f], trace)
        trace.append(f)
        x = project(x + alpha * np.sign(g), x0, cfg.eps, cfg.norm)
    f, s = objective.value(x)
    queries += 1
    _check_finite([f], trace)
    trace.append(f)
    if s is None:
        s = objective.model.chunk_scores(x)
    return x, f, s, trace, queries


def _wrap_result(objective, video, x0, x, s, cfg, trace, queries, best) -> AttackResult:
    adv = Video(id=video.id, pixels=x, video_label=video.video_label,
                frame_labels=video.frame_labels)
    return AttackResult(video=adv, original_pixels=x0, config=cfg,
                        objective_trace=trace, queries=queries,
                        success=np.asarray(objective.success_from_scores(s), dtype=bool),
                        best_objective=float(best))


def _run_restarts(objective, video, cfg: AttackConfig, runner):
    """Shared restart loop: runner(rng, init) -> (x, f, s, trace, queries);
    keeps the restart with the best final objective."""
    x0 = np.asarray(video.pixels, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA77]))
    best = None
    total_queries = 0
    full_trace: list[float] = []
    for r in range(cfg.restarts):
        init = None
        if r > 0:
            init = x0 + rng.uniform(-cfg.eps, cfg.eps, size=x0.shape)
        x, f, s, trace, queries = runner(rng, init)
        total_queries += queries
        full_trace.extend(trace)
        if best is None or f > best[1]:
            best = (x, f, s)
    return _wrap_result(objective, video, x0, best[0], best[2], cfg,
                        full_trace, total_queries, best[1])


def pgd_vad(model, video: Video, y_signs, cfg: AttackConfig) -> AttackResult:
    """Plain PGD ascent on the vad objective (cfg.iters gradient steps)."""
    objective = VadObjective(model, y_signs)
    x0 = np.asarray(video.pixels, dtype=np.float64)

    def runner(rng, init):
        return _pgd_core(objective, x0, cfg, cfg.iters + 1, init)

    return _run_restarts(objective, video, cfg, runner)


def mil_pgd(model, video: Video, y: int, cfg: AttackConfig,
            kind: AggregatorKind | None = None) -> AttackResult:
    """PGD ascent on the video-level MIL loss (max aggregator by default)."""
    objective = MilObjective(model, y, kind or AggregatorKind("max"))
    x0 = np.asarray(video.pixels, dtype=np.float64)

    def runner(rng, init):
        return _pgd_core(objective, x0, cfg, cfg.iters + 1, init)

    return _run_restarts(objective, video, cfg, runner)


# --------------------------------------------------------------------------
# APGD

def apgd_checkpoints(n: int) -> list[int]:
    """Budget-fraction checkpoints: first at 0.22n, intervals decreasing by
    0.03n with a floor of 0.06n."""
    pts = []
    p_prev, p = 0.0, 0.22
    while True:
        w = int(math.ceil(p * n))
        if w >= n:
            break
        if not pts or w > pts[-1]:
            pts.append(w)
        p_prev, p = p, p + max(p - p_prev - 0.03, 0.06)
    return pts


def _apgd_single(objective, x0, cfg: AttackConfig, init):
    n = cfg.iters
    eta = 2.0 * cfg.eps
    x = x0.copy() if init is None else project(init, x0, cfg.eps, cfg.norm)
    trace: list[float] = []
    f, g, s = objective.value_and_grad(x)
    queries = 1
    _check_finite(g, trace)
    trace.append(f)
    if s is None:
        s = objective.model.chunk_scores(x)
    f_best, x_best, s_best, g_best = f, x.copy(), s, g
    ckpts = set(apgd_checkpoints(n))
    prev_ck = 0
    n_improved = 0
    f_best_at_ck, eta_at_ck = f_best, eta
    x_prev = x.copy()
    for t in range(1, n):
        z = project(x + eta * np.sign(g), x0, cfg.eps, cfg.norm)
        if t == 1:
            x_new = z
        else:
            x_new = project(x + 0.75 * (z - x) + 0.25 * (x - x_prev),
                            x0, cfg.eps, cfg.norm)
        x_prev, x = x, x_new
        f, g, s = objective.value_and_grad(x)
        queries += 1
        _check_finite(g, trace)
        trace.append(f)
        if f > f_best:
            f_best, x_best, g_best = f, x.copy(), g
            s_best = s if s is not None else objective.model.chunk_scores(x)
            n_improved += 1
        if t in ckpts:
            interval = t - prev_ck
            halve = (n_improved < 0.75 * interval) or \
                    (eta == eta_at_ck and f_best == f_best_at_ck)
            if halve:
                eta /= 2.0
                x = x_best.copy()
                x_prev = x.copy()
                g = g_best
            prev_ck = t
            n_improved = 0
            f_best_at_ck, eta_at_ck = f_best, eta
    return x_best, f_best, s_best, trace, queries


def apgd_vad(model, video: Video, y_signs, cfg: AttackConfig) -> AttackResult:
    """Momentum PGD with adaptive step halving; keeps the best iterate."""
    if cfg.iters == 0:
        return pgd_vad(model, video, y_signs, cfg)
    objective = VadObjective(model, y_signs)
    x0 = np.asarray(video.pixels, dtype=np.float64)

    def runner(rng, init):
        return _apgd_single(objective, x0, cfg, init)

    return _run_restarts(objective, video, cfg, runner)


# --------------------------------------------------------------------------
# Square

def _square_side(p_init: float, used_frac: float, height: int, width: int) -> int:
    """Monotone side-length schedule over the query budget."""
    it = used_frac * 10000
    steps = [(10, 1.0), (50, 2.0), (200, 4.0), (500, 8.0), (1000, 16.0),
             (2000, 32.0), (4000, 64.0), (6000, 128.0), (8000, 256.0)]
    div = 512.0
    for limit, d in steps:
        if it <= limit:
            div = d
            break
    p = p_init / div
    side = int(round(math.sqrt(p * height * width)))
    return max(1, min(side, height, width))


def square_vad(model, video: Video, y_signs, cfg: AttackConfig) -> AttackResult:
    """Gradient-free random-square search maximizing the vad objective.

    Spends at most cfg.iters model evaluations; only strictly improving
    proposals are accepted. iters == 0 returns the identity perturbation.
    """
    objective = VadObjective(model, y_signs)
    x0 = np.asarray(video.pixels, dtype=np.float64)
    cs = model.chunk_size
    m = len(np.asarray(y_signs))
    _, height, width, chans = x0.shape
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5AE]))
    if cfg.iters == 0:
        adv = Video(id=video.id, pixels=x0.copy(), video_label=video.video_label,
                    frame_labels=video.frame_labels)
        return AttackResult(video=adv, original_pixels=x0, config=cfg,
                            objective_trace=[], queries=0,
                            success=np.zeros(m, dtype=bool),
                            best_objective=float("nan"))
    queries = 0
    trace: list[float] = []

    def evaluate(x):
        nonlocal queries
        f, s = objective.value(x)
        queries += 1
        _check_finite([f], trace)
        trace.append(f)
        return f, s

    f_cur, s_cur = evaluate(x0)
    x_cur = x0.copy()
    if queries < cfg.iters:
        # vertical-stripe init, drawn per chunk and channel
        delta = np.zeros_like(x0)
        for ci in range(m):
            stripes = cfg.eps * rng.choice([-1.0, 1.0], size=(1, 1, width, chans))
            delta[ci * cs : (ci + 1) * cs] = stripes
        cand = project(x0 + delta, x0, cfg.eps, cfg.norm)
        f_new, s_new = evaluate(cand)
        if f_new > f_cur:
            f_cur, s_cur, x_cur = f_new, s_new, cand
    while queries < cfg.iters:
        side = _square_side(0.8, queries / cfg.iters, height, width)
        ci = int(rng.integers(m))
        ty = int(rng.integers(0, height - side + 1))
        tx = int(rng.integers(0, width - side + 1))
        signs = rng.choice([-1.0, 1.0], size=chans)
        cand_delta = x_cur - x0
        cand_delta = cand_delta.copy()
        cand_delta[ci * cs : (ci + 1) * cs, ty : ty + side, tx : tx + side, :] = cfg.eps * signs
        cand = project(x0 + cand_delta, x0, cfg.eps, cfg.norm)
        f_new, s_new = evaluate(cand)
        if f_new > f_cur:
            f_cur, s_cur, x_cur = f_new, s_new, cand
    return _wrap_result(objective, video, x0, x_cur, s_cur, cfg,
                        trace, queries, f_cur)


# --------------------------------------------------------------------------
# A3: adaptive restart directions + budget reallocation

class DirectionBank:
    """Append-only log of successful unit-linf perturbation directions."""

    def __init__(self):
        self._dirs: list[np.ndarray] = []

    def __len__(self):
        return len(self._dirs)

    def append(self, delta: np.ndarray):
        scale = np.abs(delta).max()
        if scale > 0:
            self._dirs.append((delta / scale).astype(np.float64))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self._dirs[int(rng.integers(len(self._dirs)))]


def a3_vad(model, videos: list[Video], y_signs_list, cfg: AttackConfig,
           bank: DirectionBank | None = None) -> list[AttackResult]:
    """Batch attack over videos sharing one budget policy.

    Per-video budget is cfg.iters queries, spent over max(1, cfg.restarts)
    restart rounds. Round inits draw from the direction bank once it is
    non-empty (adaptive initial directions); rounds that improve a video's
    best objective push their normalized perturbation into the bank. After
    the warmup fraction of the total budget, videos whose improvement-per-
    query falls strictly below the batch median are dropped and their
    leftover budget is split among the survivors. A single-video batch is
    never dropped.
    """
    if len(videos) != len(y_signs_list):
        raise ContractError("videos and y_signs_list lengths differ")
    if not videos:
        return []
    bank = bank if bank is not None else DirectionBank()
    n_videos = len(videos)
    rounds = max(1, cfg.restarts)
    per_round = max(2, cfg.iters // rounds) if cfg.iters else 0
    total_budget = cfg.iters * n_videos

    class _State:
        def __init__(self, video, y):
            self.video = video
            self.objective = VadObjective(model, y)
            self.x0 = np.asarray(video.pixels, dtype=np.float64)
            self.remaining = cfg.iters
            self.queries = 0
            self.trace: list[float] = []
            self.f_init = None
            self.x_best = self.x0.copy()
            self.f_best = None
            self.s_best = None
            self.discarded = False

    states = [_State(v, y) for v, y in zip(videos, y_signs_list)]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA3]))
    alpha = cfg.alpha if cfg.alpha is not None else 2.5 * cfg.eps / max(1, per_round)
    warmup_done = cfg.osd_warmup >= 1.0
    spent = 0
    round_idx = 0
    while any(st.remaining > 0 and not st.discarded for st in states):
        for st in states:
            if st.discarded or st.remaining <= 0:
                continue
            budget = min(per_round, st.remaining)
            if round_idx == 0 or len(bank) == 0:
                init = None if round_idx == 0 else \
                    st.x0 + rng.uniform(-cfg.eps, cfg.eps, size=st.x0.shape)
            else:
                init = st.x0 + cfg.eps * bank.sample(rng)
            f_before = st.f_best
            x, f, s, trace, q = _pgd_core(st.objective, st.x0, cfg, budget,
                                          init, alpha=alpha)
            st.remaining -= q
            st.queries += q
            spent += q
            st.trace.extend(trace)
            if st.f_init is None:
                st.f_init = trace[0]
            if st.f_best is None or f > st.f_best:
                st.f_best, st.x_best, st.s_best = f, x, s
            if f_before is None or st.f_best > f_before:
                bank.append(st.x_best - st.x0)
        if not warmup_done and spent >= cfg.osd_warmup * total_budget:
            warmup_done = True
            active = [st for st in states if not st.discarded and st.remaining > 0]
            if len(active) > 1:
                rates = np.array([(st.f_best - st.f_init) / max(1, st.queries)
                                  for st in active])
                median = float(np.median(rates))
                doomed = [st for st, rate in zip(active, rates) if rate < median]
                survivors = [st for st in active if st not in doomed]
                if doomed and survivors:
                    freed = sum(st.remaining for st in doomed)
                    for st in doomed:
                        st.discarded = True
                        st.remaining = 0
                    extra = freed // len(survivors)
                    for st in survivors:
                        st.remaining += extra
        round_idx += 1
    results = []
    for st in states:
        if st.f_best is None:  # zero-budget call
            f, s = st.objective.value(st.x0)
            st.f_best, st.s_best = f, s
            st.queries += 1
        results.append(_wrap_result(st.objective, st.video, st.x0, st.x_best,
                                    st.s_best, cfg, st.trace, st.queries, st.f_best))
    return results


# --------------------------------------------------------------------------
# dispatch

def run_attack(model, video: Video, cfg: AttackConfig,
               y_signs=None, y_video: int | None = None,
               kind: AggregatorKind | None = None) -> AttackResult:
    """Single-video dispatch by cfg.family (a3 runs as a batch of one)."""
    if cfg.family == "mil_pgd":
        if y_video is None:
            y_video = video.video_label
        return mil_pgd(model, video, y_video, cfg, kind)
    if y_signs is None:
        if video.frame_labels is None:
            raise ContractError("attack needs y_signs or frame labels")
        y_signs = y_signs_from_frame_labels(video.frame_labels, model.chunk_size)
    if cfg.family == "pgd":
        return pgd_vad(model, video, y_signs, cfg)
    if cfg.family == "apgd":
        return apgd_vad(model, video, y_signs, cfg)
    if cfg.family == "square":
        return square_vad(model, video, y_signs, cfg)
    if cfg.family == "a3":
        return a3_vad(model, [video], [y_signs], cfg)[0]
    raise ConfigurationError(f"unknown attack family {cfg.family!r}")
