"""Episode execution, logging, aggregation, and significance testing.

An EpisodeLog is one line-delimited record per step (step 0 is the reset
frame, which earns no reward), plus header metadata and the embedded field so
a log alone suffices to re-plot the flight. Curves hold the last value once
an episode ends, so mean found-fraction curves from episodes of different
lengths line up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .environment import ACTION_NAMES, Action, EnvConfig, SearchEnv
from .fieldsim import Field, config_fingerprint
from .rng import RngStream
from .trainer import KEY_EVAL, softmax_probs


@dataclass
class StepRecord:
    step: int
    row: int
    col: int
    action: str
    reward: float
    newly_found: int
    cumulative_found: int
    budget: float
    done_reason: str = ""


@dataclass
class EpisodeLog:
    fingerprint: str
    field_fingerprint: str
    seed: int
    episode: int
    field_size: int
    fov_size: int
    n_weeds: int
    start_corner: str
    weed_rows: np.ndarray
    weed_cols: np.ndarray
    weed_clusters: np.ndarray
    weed_found_step: np.ndarray
    records: list[StepRecord] = dc_field(default_factory=list)
    land_values: list = dc_field(default_factory=list)  # (found_fraction, p_land); not serialized

    @property
    def steps(self) -> int:
        """Number of actions taken (the step-0 reset record does not count)."""
        return self.records[-1].step

    @property
    def found_at_reset(self) -> int:
        return self.records[0].cumulative_found

    @property
    def total_found(self) -> int:
        return self.records[-1].cumulative_found

    @property
    def found_fraction(self) -> float:
        if self.n_weeds == 0:
            return 1.0
        return self.total_found / self.n_weeds

    @property
    def reward_sum(self) -> float:
        return sum(r.reward for r in self.records)

    @property
    def done_reason(self) -> str:
        return self.records[-1].done_reason

    def to_text(self) -> str:
        lines = [
            "# weedscout-episode v1",
            f"# fingerprint={self.fingerprint}",
            f"# field_fingerprint={self.field_fingerprint}",
            f"# seed={self.seed}",
            f"# episode={self.episode}",
            f"# field_size={self.field_size}",
            f"# fov_size={self.fov_size}",
            f"# n_weeds={self.n_weeds}",
            f"# start_corner={self.start_corner}",
            "# weeds: x y cluster found_step (x = column, y = row, -1 = never found)",
        ]
        for r, c, cl, fs in zip(self.weed_rows, self.weed_cols, self.weed_clusters, self.weed_found_step):
            lines.append(f"# weed {c:.6f} {r:.6f} {cl} {fs}")
        lines.append("step\trow\tcol\taction\treward\tnewly_found\tcumulative_found\tbudget\tdone_reason")
        for rec in self.records:
            lines.append(
                f"{rec.step}\t{rec.row}\t{rec.col}\t{rec.action}\t{rec.reward!r}\t"
                f"{rec.newly_found}\t{rec.cumulative_found}\t{rec.budget!r}\t{rec.done_reason}"
            )
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "EpisodeLog":
        meta: dict[str, str] = {}
        weeds = []
        records = []
        header_seen = False
        for line in text.splitlines():
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("# weed "):
                x, y, cl, fs = line[len("# weed ") :].split()
                weeds.append((float(y), float(x), int(cl), int(fs)))
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body and " " not in body.split("=", 1)[0]:
                    k, v = body.split("=", 1)
                    meta[k] = v
                continue
            if line.startswith("step\t"):
                header_seen = True
                continue
            if not header_seen:
                continue
            f = line.split("\t")
            records.append(
                StepRecord(
                    int(f[0]), int(f[1]), int(f[2]), f[3], float(f[4]),
                    int(f[5]), int(f[6]), float(f[7]), f[8] if len(f) > 8 else "",
                )
            )
        w = np.array(weeds).reshape(-1, 4)
        return cls(
            fingerprint=meta.get("fingerprint", ""),
            field_fingerprint=meta.get("field_fingerprint", ""),
            seed=int(meta.get("seed", -1)),
            episode=int(meta.get("episode", -1)),
            field_size=int(meta["field_size"]),
            fov_size=int(meta["fov_size"]),
            n_weeds=int(meta["n_weeds"]),
            start_corner=meta.get("start_corner", ""),
            weed_rows=w[:, 0],
            weed_cols=w[:, 1],
            weed_clusters=w[:, 2].astype(int),
            weed_found_step=w[:, 3].astype(int),
            records=records,
        )

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        with open(path) as fh:
            return cls.from_text(fh.read())


class RandomWalkPolicy:
    """Uniform random movement, the no-skill reference."""

    def __init__(self, rng: RngStream, n_actions: int = 4):
        self.rng = rng
        self.n_actions = n_actions

    def act(self, obs) -> int:
        return int(self.rng.integers(0, self.n_actions))


def run_episode(env: SearchEnv, policy, record_q: bool = False, field: Field | None = None) -> EpisodeLog:
    """Play one episode to termination (or plan exhaustion) and log it.

    A policy returning None from act() ends the episode with done_reason
    "plan_end" (scripted plans shorter than the battery budget).
    """
    obs = env.reset(field=field)
    if hasattr(policy, "begin_episode"):
        policy.begin_episode(env)
    st = env.state
    cfg = env.cfg
    log = EpisodeLog(
        fingerprint=config_fingerprint(cfg),
        field_fingerprint=config_fingerprint(cfg.field),
        seed=env.seed,
        episode=env.episode,
        field_size=cfg.size,
        fov_size=cfg.fov_size,
        n_weeds=st.field.n_weeds,
        start_corner=st.start_corner,
        weed_rows=st.field.positions[:, 0].copy(),
        weed_cols=st.field.positions[:, 1].copy(),
        weed_clusters=st.field.clusters.copy(),
        weed_found_step=st.found_step,  # updated in place by the env
        records=[
            StepRecord(
                0, st.row, st.col, "reset", 0.0, st.found_at_reset, st.found_count,
                1.0, st.done_reason,
            )
        ],
    )
    while not st.done:
        action = policy.act(obs)
        if action is None:
            log.records[-1].done_reason = "plan_end"
            break
        if record_q and getattr(policy, "last_q", None) is not None and cfg.land_action:
            frac = st.found_count / st.field.n_weeds if st.field.n_weeds else 1.0
            p_land = float(softmax_probs(np.asarray(policy.last_q, dtype=np.float64), 1.0)[-1])
            log.land_values.append((frac, p_land))
        res = env.step(action)
        log.records.append(
            StepRecord(
                st.steps, st.row, st.col, ACTION_NAMES[Action(action)],
                float(res.reward), int(res.info["newly_found"]), st.found_count,
                float(env.budget_fraction()), st.done_reason,
            )
        )
        obs = res.observation
    log.weed_found_step = st.found_step.copy()
    return log


def evaluate_policy(
    env_cfg: EnvConfig,
    policy,
    seed: int,
    episodes: int,
    key: tuple[int, ...] = (KEY_EVAL,),
    record_q: bool = False,
    fixed_field: Field | None = None,
) -> list[EpisodeLog]:
    """Run independent seeded episodes; episode i is reproducible in isolation."""
    env = SearchEnv(env_cfg, seed, key=key, fixed_field=fixed_field)
    return [run_episode(env, policy, record_q=record_q) for _ in range(episodes)]


def found_fraction_at(log: EpisodeLog, step: int) -> float:
    """Found fraction after `step` actions, holding the last value past the end."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if log.n_weeds == 0:
        return 1.0
    idx = min(step, len(log.records) - 1)
    return log.records[idx].cumulative_found / log.n_weeds


def _std(x: np.ndarray) -> float:
    return float(x.std(ddof=1)) if len(x) > 1 else 0.0


@dataclass
class EvalSummary:
    n_episodes: int
    checkpoints: tuple[int, ...]
    found_at_samples: dict
    path_samples: np.ndarray
    found_samples: np.ndarray
    reward_samples: np.ndarray
    curve_mean: np.ndarray
    curve_std: np.ndarray
    done_reasons: dict
    fingerprint: str
    field_fingerprint: str
    episode_rows: list

    def found_at(self, step: int) -> tuple[float, float]:
        s = self.found_at_samples[step]
        return float(s.mean()), _std(s)

    @property
    def path_stats(self) -> tuple[float, float]:
        return float(self.path_samples.mean()), _std(self.path_samples)

    @property
    def found_stats(self) -> tuple[float, float]:
        return float(self.found_samples.mean()), _std(self.found_samples)

    @property
    def reward_stats(self) -> tuple[float, float]:
        return float(self.reward_samples.mean()), _std(self.reward_samples)


def aggregate(logs: list[EpisodeLog], checkpoints=(100, 200, 300)) -> EvalSummary:
    """Mean/std metrics over episodes from one configuration.

    Logs must share a config fingerprint; mixing runs is a usage error.
    """
    if not logs:
        raise ValueError("aggregate needs at least one episode log")
    fp = logs[0].fingerprint
    if any(lg.fingerprint != fp for lg in logs):
        raise ValueError("episode logs come from different configurations")
    checkpoints = tuple(int(c) for c in checkpoints)
    found_at_samples = {
        c: np.array([found_fraction_at(lg, c) for lg in logs]) for c in checkpoints
    }
    path = np.array([lg.steps for lg in logs], dtype=float)
    found = np.array([lg.found_fraction for lg in logs])
    reward = np.array([lg.reward_sum for lg in logs])
    max_step = max(lg.steps for lg in logs)
    curves = np.empty((len(logs), max_step + 1))
    for i, lg in enumerate(logs):
        frac = (
            np.array([r.cumulative_found for r in lg.records]) / lg.n_weeds
            if lg.n_weeds
            else np.ones(len(lg.records))
        )
        curves[i, : len(frac)] = frac
        curves[i, len(frac) :] = frac[-1]
    reasons: dict[str, int] = {}
    for lg in logs:
        reasons[lg.done_reason] = reasons.get(lg.done_reason, 0) + 1
    rows = []
    for i, lg in enumerate(logs):
        row = {
            "episode": lg.episode,
            "seed": lg.seed,
            "steps": lg.steps,
            "n_weeds": lg.n_weeds,
            "total_found": lg.total_found,
            "found_fraction": float(lg.found_fraction),
            "reward_sum": float(lg.reward_sum),
            "done_reason": lg.done_reason,
        }
        for c in checkpoints:
            row[f"found_at_{c}"] = float(found_at_samples[c][i])
        rows.append(row)
    return EvalSummary(
        n_episodes=len(logs),
        checkpoints=checkpoints,
        found_at_samples=found_at_samples,
        path_samples=path,
        found_samples=found,
        reward_samples=reward,
        curve_mean=curves.mean(axis=0),
        curve_std=curves.std(axis=0, ddof=1) if len(logs) > 1 else np.zeros(max_step + 1),
        done_reasons=reasons,
        fingerprint=fp,
        field_fingerprint=logs[0].field_fingerprint,
        episode_rows=rows,
    )


# --- Welch's t-test with a native Student-t CDF ---


@dataclass
class WelchResult:
    t: float
    dof: float
    p_value: float
    degenerate: bool = False


def welch_t_test(a, b) -> WelchResult:
    """Two-sided Welch's t-test (unequal variances, Welch-Satterthwaite dof).

    Zero pooled variance is flagged degenerate instead of crashing: equal
    means give (t=0, p=1), unequal means (t=+-inf, p=0).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("welch_t_test needs at least two samples per side")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    sa, sb = va / len(a), vb / len(b)
    se2 = sa + sb
    if se2 == 0.0:
        if ma == mb:
            return WelchResult(0.0, 0.0, 1.0, degenerate=True)
        return WelchResult(math.copysign(math.inf, ma - mb), 0.0, 0.0, degenerate=True)
    t = (ma - mb) / math.sqrt(se2)
    dof = se2 * se2 / (sa * sa / (len(a) - 1) + sb * sb / (len(b) - 1))
    return WelchResult(float(t), float(dof), student_t_two_sided_p(t, dof))


def student_t_two_sided_p(t: float, dof: float) -> float:
    """P(|T_dof| >= |t|) via the regularized incomplete beta function."""
    if dof <= 0:
        raise ValueError("dof must be > 0")
    if math.isinf(t):
        return 0.0
    x = dof / (dof + t * t)
    return min(1.0, max(0.0, regularized_incomplete_beta(0.5 * dof, 0.5, x)))


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) by Lentz's continued fraction, accurate to ~1e-14."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def _beta_cf(a: float, b: float, x: float) -> float:
    max_iter = 300
    eps = 3e-15
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError("incomplete beta continued fraction did not converge")


# --- comparison reports ---


@dataclass
class ComparisonRow:
    metric: str
    higher_better: bool
    mean_a: float
    std_a: float
    mean_b: float
    std_b: float
    t: float
    dof: float
    p_value: float
    significant: bool
    degenerate: bool


@dataclass
class ComparisonReport:
    label_a: str
    label_b: str
    alpha: float
    rows: list

    def to_text(self) -> str:
        head = (
            f"{'metric':<16} {self.label_a + ' (a)':>22} {self.label_b + ' (b)':>22} "
            f"{'t':>9} {'dof':>8} {'p':>10} sig"
        )
        lines = [head, "-" * len(head)]
        for r in self.rows:
            star = "*" if r.significant else ("~" if r.degenerate else "")
            lines.append(
                f"{r.metric:<16} {r.mean_a:>13.4f}+-{r.std_a:<7.4f} {r.mean_b:>13.4f}+-{r.std_b:<7.4f} "
                f"{r.t:>9.3f} {r.dof:>8.2f} {r.p_value:>10.3e} {star}"
            )
        lines.append(f"(* = a better than b at two-sided alpha={self.alpha})")
        return "\n".join(lines)

    def to_tsv(self) -> str:
        lines = [
            f"# a={self.label_a}",
            f"# b={self.label_b}",
            f"# alpha={self.alpha!r}",
            "metric\tmean_a\tstd_a\tmean_b\tstd_b\tt\tdof\tp_value\tsignificant\tdegenerate",
        ]
        for r in self.rows:
            lines.append(
                f"{r.metric}\t{r.mean_a!r}\t{r.std_a!r}\t{r.mean_b!r}\t{r.std_b!r}\t"
                f"{r.t!r}\t{r.dof!r}\t{r.p_value!r}\t{int(r.significant)}\t{int(r.degenerate)}"
            )
        return "\n".join(lines) + "\n"


def write_eval_outputs(out_dir, summary: EvalSummary) -> dict:
    """Write episodes.tsv / summary.tsv / curve.tsv into out_dir.

    episodes.tsv holds the raw per-episode samples (floats in repr form, so
    reruns can be compared byte for byte and compare() can rebuild the exact
    sample vectors); the other two are derived views.
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / f"{name}.tsv" for name in ("episodes", "summary", "curve")}

    cols = list(summary.episode_rows[0].keys())
    with open(paths["episodes"], "w") as fh:
        fh.write(f"# fingerprint={summary.fingerprint}\n")
        fh.write(f"# field_fingerprint={summary.field_fingerprint}\n")
        fh.write("\t".join(cols) + "\n")
        for row in summary.episode_rows:
            fh.write("\t".join(repr(row[c]) if isinstance(row[c], float) else str(row[c]) for c in cols) + "\n")

    with open(paths["summary"], "w") as fh:
        fh.write(f"# fingerprint={summary.fingerprint}\n")
        fh.write(f"# field_fingerprint={summary.field_fingerprint}\n")
        fh.write(f"# n_episodes={summary.n_episodes}\n")
        fh.write(f"# done_reasons={','.join(f'{k}:{v}' for k, v in sorted(summary.done_reasons.items()))}\n")
        fh.write("metric\tmean\tstd\n")
        for c in summary.checkpoints:
            m, s = summary.found_at(c)
            fh.write(f"found_at_{c}\t{m!r}\t{s!r}\n")
        for name, (m, s) in (
            ("final_found", summary.found_stats),
            ("path_length", summary.path_stats),
            ("reward", summary.reward_stats),
        ):
            fh.write(f"{name}\t{m!r}\t{s!r}\n")

    with open(paths["curve"], "w") as fh:
        fh.write("step\tmean_found_fraction\tstd\n")
        for i, (m, s) in enumerate(zip(summary.curve_mean, summary.curve_std)):
            fh.write(f"{i}\t{float(m)!r}\t{float(s)!r}\n")
    return {k: str(v) for k, v in paths.items()}


def load_eval_outputs(out_dir) -> EvalSummary:
    """Rebuild an EvalSummary from a directory written by write_eval_outputs."""
    from pathlib import Path

    out_dir = Path(out_dir)
    meta: dict[str, str] = {}
    rows: list[dict] = []
    cols: list[str] = []
    with open(out_dir / "episodes.tsv") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
                continue
            if not cols:
                cols = line.split("\t")
                continue
            vals = line.split("\t")
            row: dict = {}
            for c, v in zip(cols, vals):
                if c in ("episode", "seed", "steps", "n_weeds", "total_found"):
                    row[c] = int(v)
                elif c == "done_reason":
                    row[c] = v
                else:
                    row[c] = float(v)
            rows.append(row)
    if not rows:
        raise ValueError(f"{out_dir}/episodes.tsv holds no episodes")
    checkpoints = tuple(int(c.split("_")[-1]) for c in cols if c.startswith("found_at_"))
    curve = np.loadtxt(out_dir / "curve.tsv", skiprows=1)
    curve = curve.reshape(-1, 3)
    reasons: dict[str, int] = {}
    for row in rows:
        reasons[row["done_reason"]] = reasons.get(row["done_reason"], 0) + 1
    return EvalSummary(
        n_episodes=len(rows),
        checkpoints=checkpoints,
        found_at_samples={c: np.array([r[f"found_at_{c}"] for r in rows]) for c in checkpoints},
        path_samples=np.array([float(r["steps"]) for r in rows]),
        found_samples=np.array([r["found_fraction"] for r in rows]),
        reward_samples=np.array([r["reward_sum"] for r in rows]),
        curve_mean=curve[:, 1],
        curve_std=curve[:, 2],
        done_reasons=reasons,
        fingerprint=meta.get("fingerprint", ""),
        field_fingerprint=meta.get("field_fingerprint", ""),
        episode_rows=rows,
    )


def compare(
    summary_a: EvalSummary,
    summary_b: EvalSummary,
    alpha: float = 0.001,
    label_a: str = "a",
    label_b: str = "b",
) -> ComparisonReport:
    """Welch-test A against B per checkpoint plus terminal metrics.

    A row is starred when p < alpha AND the difference favors A (higher
    found fraction, shorter path). Requires matching field configurations.
    """
    if summary_a.field_fingerprint != summary_b.field_fingerprint:
        raise ValueError("comparison requires matching field configurations")
    rows = []

    def add(metric, sa, sb, higher_better):
        res = welch_t_test(sa, sb)
        better = sa.mean() > sb.mean() if higher_better else sa.mean() < sb.mean()
        rows.append(
            ComparisonRow(
                metric, higher_better,
                float(sa.mean()), _std(sa), float(sb.mean()), _std(sb),
                res.t, res.dof, res.p_value,
                significant=bool(res.p_value < alpha and better),
                degenerate=res.degenerate,
            )
        )

    for c in summary_a.checkpoints:
        if c in summary_b.found_at_samples:
            add(f"found_at_{c}", summary_a.found_at_samples[c], summary_b.found_at_samples[c], True)
    add("final_found", summary_a.found_samples, summary_b.found_samples, True)
    add("path_length", summary_a.path_samples, summary_b.path_samples, False)
    return ComparisonReport(label_a, label_b, alpha, rows)
