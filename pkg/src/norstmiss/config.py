"""Experiment configuration: a sectioned key = value file and named presets.

A config file has three sections::

    [generation]
    n = 1000
    d = 4000
    ...
    [algorithm]
    variant = reuse:4
    ...
    [report]
    thresholds = 1e-13, 1e-8

Unknown keys and unparsable values are collected and raised together as a
:class:`ConfigInvalid` keyed by ``section.key``.
"""

import configparser
from dataclasses import dataclass, field, fields, replace

from .exceptions import ConfigInvalid
from .robust import RobustParams
from .tracker import TrackerParams
from .variants import VariantParams


@dataclass
class GenerationConfig:
    """Synthetic data recipe.

    ``rho`` is the fraction of *observed* entries for the Bernoulli model.
    Changes happen at ``period*j + 1`` for ``j = 1..J`` unless
    ``change_times`` lists them.  Noise has standard deviation
    ``noise_ratio * sqrt(lambda_minus)``.  ``outlier_s = 0`` means no outliers.
    """

    n: int = 1000
    d: int = 4000
    r: int = 30
    f: float = 100.0
    J: int = 0
    period: int = 800
    change_times: list = None
    gamma: float = 0.0
    time_varying: bool = False
    support: str = "bernoulli"
    rho: float = 0.9
    mo_s: int = 200
    mo_b0: float = 0.05
    noise_ratio: float = 0.0
    outlier_s: int = 0
    outlier_b0: float = 0.05
    x_min: float = 10.0
    x_max: float = 25.0
    seed: int = 0

    def changes(self):
        if self.change_times is not None:
            return [int(t) for t in self.change_times]
        return [self.period * j + 1 for j in range(1, self.J + 1)]


@dataclass
class AlgorithmConfig:
    """Tracker, variant and robust settings.  ``alpha`` defaults to ``2 r``."""

    variant: str = "basic"
    K: int = 33
    alpha: int = None
    omega_evals: float = None
    omega_scale: float = 0.0008
    ls_solver: str = "cgls"
    cgls_tol: float = 1e-16
    cgls_max_iter: int = 20
    svd_seed: int = 0
    cond_limit: float = 1e8
    smoothing: bool = False
    robust: bool = False
    t_train: int = 400
    robust_x_min: float = 10.0
    xi: float = None
    omega_supp: str = None
    fill_value: float = 10.0
    altproj_max_iter: int = 500
    altproj_tol: float = 1e-3
    oracle_support: bool = False


@dataclass
class ReportConfig:
    out: str = "out"
    thresholds: list = field(default_factory=lambda: [1e-13])
    repeats: int = 1


@dataclass
class ExperimentConfig:
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    algorithm: AlgorithmConfig = field(default_factory=AlgorithmConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    name: str = "custom"

    # ---------------------------------------------------------- derived
    def tracker_params(self):
        a, g = self.algorithm, self.generation
        return TrackerParams(r=g.r, K=a.K, alpha=a.alpha, omega_evals=a.omega_evals,
                             omega_scale=a.omega_scale, cgls_tol=a.cgls_tol,
                             cgls_max_iter=a.cgls_max_iter, svd_seed=a.svd_seed,
                             cond_limit=a.cond_limit, ls_solver=a.ls_solver)

    def variant_params(self):
        return VariantParams.parse(self.algorithm.variant)

    def robust_params(self):
        a = self.algorithm
        supp = a.omega_supp
        if supp is not None and supp != "auto":
            supp = float(supp)
        return RobustParams(x_min=a.robust_x_min, xi=a.xi, omega_supp=supp,
                            t_train=a.t_train, fill_value=a.fill_value,
                            altproj_max_iter=a.altproj_max_iter, altproj_tol=a.altproj_tol)

    def with_seed(self, seed):
        return replace(self, generation=replace(self.generation, seed=int(seed)))

    def with_variant(self, variant):
        return replace(self, algorithm=replace(self.algorithm, variant=variant))

    def validate(self):
        """Raise :class:`ConfigInvalid` listing every violated constraint."""
        g, a, rep = self.generation, self.algorithm, self.report
        errs = {}

        def need(ok, key, msg):
            if not ok:
                errs[key] = msg

        need(g.n >= 2, "generation.n", "must be at least 2")
        need(1 <= g.r < g.n, "generation.r", "must satisfy 1 <= r < n")
        need(g.d >= 1, "generation.d", "must be positive")
        need(g.f >= 1, "generation.f", "must be at least 1")
        need(g.J >= 0, "generation.J", "must be nonnegative")
        need(g.period >= 1, "generation.period", "must be positive")
        need(g.support in ("bernoulli", "moving-object"), "generation.support",
             "must be bernoulli or moving-object")
        need(0 < g.rho <= 1, "generation.rho", "observed fraction must lie in (0, 1]")
        if g.support == "moving-object":
            need(1 <= g.mo_s < g.n, "generation.mo_s", "must satisfy 1 <= mo_s < n")
            need(0 < g.mo_b0 <= 1, "generation.mo_b0", "must lie in (0, 1]")
        need(g.noise_ratio >= 0, "generation.noise_ratio", "must be nonnegative")
        need(0 <= g.outlier_s < g.n, "generation.outlier_s", "must satisfy 0 <= outlier_s < n")
        need(0 < g.x_min <= g.x_max, "generation.x_min", "need 0 < x_min <= x_max")
        need(g.seed >= 0, "generation.seed", "must be nonnegative")
        ch = g.changes()
        need(len(ch) == g.J, "generation.change_times", f"need exactly J={g.J} entries")
        need(all(1 < t for t in ch) and all(b > a_ for a_, b in zip(ch, ch[1:])),
             "generation.change_times", "must be increasing and after frame 1")
        try:
            VariantParams.parse(a.variant).hop(a.alpha or 2 * g.r)
        except (ValueError, IndexError) as exc:
            errs["algorithm.variant"] = str(exc)
        for name, build in (("algorithm", self.tracker_params), ("algorithm", self.robust_params)):
            try:
                build()
            except ConfigInvalid as exc:
                errs.update({f"{name}.{k}": v for k, v in exc.errors.items()})
        if a.robust:
            need(a.t_train >= g.r, "algorithm.t_train", f"must be at least r={g.r}")
            need(a.t_train < g.d, "algorithm.t_train", "must be shorter than the stream")
        need(rep.repeats >= 1, "report.repeats", "must be at least 1")
        need(all(t > 0 for t in rep.thresholds), "report.thresholds", "must be positive")
        if errs:
            raise ConfigInvalid(errs)
        return self

    # ------------------------------------------------------------ text
    def to_ini(self):
        lines = [f"# preset: {self.name}"]
        for section in ("generation", "algorithm", "report"):
            lines.append(f"[{section}]")
            obj = getattr(self, section)
            for f in fields(obj):
                v = getattr(obj, f.name)
                if v is None:
                    continue
                if isinstance(v, list):
                    v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
                elif isinstance(v, float):
                    v = repr(v)
                lines.append(f"{f.name} = {v}")
            lines.append("")
        return "\n".join(lines)


_SECTIONS = {"generation": GenerationConfig, "algorithm": AlgorithmConfig, "report": ReportConfig}
_LISTS = {("generation", "change_times"): int, ("report", "thresholds"): float}
_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


def _convert(section, key, text, default):
    text = text.strip()
    if (section, key) in _LISTS:
        kind = _LISTS[(section, key)]
        return [kind(x) for x in text.replace(",", " ").split()]
    if text.lower() in ("", "none"):
        return None
    if isinstance(default, bool):
        if text.lower() not in _BOOL:
            raise ValueError(f"expected a boolean, got {text!r}")
        return _BOOL[text.lower()]
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if key in ("alpha",):
        return int(text)
    if key in ("omega_evals", "xi"):
        return float(text)
    return text


def parse_config(text, base=None, source="<config>"):
    """Parse config text on top of `base` (a preset or the defaults)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys such as K and J are case-sensitive
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigInvalid({"file": str(exc).splitlines()[0]}) from None
    cfg = base or ExperimentConfig()
    parts = {name: getattr(cfg, name) for name in _SECTIONS}
    errs = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            errs[section] = "unknown section"
            continue
        obj = parts[section]
        names = {f.name for f in fields(obj)}
        defaults = {f.name: getattr(_SECTIONS[section](), f.name) for f in fields(obj)}
        updates = {}
        for key, val in cp.items(section):
            if key not in names:
                errs[f"{section}.{key}"] = "unknown key"
                continue
            try:
                updates[key] = _convert(section, key, val, defaults[key])
            except ValueError as exc:
                errs[f"{section}.{key}"] = str(exc)
        parts[section] = replace(obj, **updates)
    if errs:
        raise ConfigInvalid(errs)
    return replace(cfg, **parts)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base=base, source=str(path))


# ------------------------------------------------------------------ presets

def _fixed(rho, **alg):
    return ExperimentConfig(
        generation=GenerationConfig(n=1000, d=4000, r=30, f=100.0, rho=rho),
        algorithm=AlgorithmConfig(K=33, alpha=60, omega_evals=0.0008 / 3, **alg),
        report=ReportConfig(thresholds=[1e-13]))


def _preset_fixed_bern_07():
    return replace(_fixed(0.7), name="fixed-bern-0.7")


def _preset_fixed_bern_09():
    cfg = _fixed(0.9, smoothing=True)
    return replace(cfg, name="fixed-bern-0.9", report=ReportConfig(thresholds=[1e-13]))


def _preset_moving_object():
    cfg = _fixed(0.8)
    gen = replace(cfg.generation, support="moving-object", mo_s=200, mo_b0=0.05)
    return replace(cfg, generation=gen, name="moving-object-0.8")


def _preset_pw_const_noisy():
    gen = GenerationConfig(n=1000, d=10000, r=30, f=100.0, J=6, period=800, gamma=100.0,
                           rho=0.9, noise_ratio=3e-3)
    alg = AlgorithmConfig(K=7, alpha=100, omega_evals=0.0008 / 3, smoothing=True)
    return ExperimentConfig(gen, alg, ReportConfig(thresholds=[1e-2, 1e-3]), name="pw-const-noisy")


def _preset_rmc():
    gen = GenerationConfig(n=1000, d=4000, r=30, f=100.0, rho=0.9, outlier_s=50,
                           outlier_b0=0.05, x_min=10.0, x_max=25.0)
    alg = AlgorithmConfig(K=33, alpha=60, omega_evals=7.8e-4, robust=True, t_train=400,
                          robust_x_min=10.0, smoothing=True)
    return ExperimentConfig(gen, alg, ReportConfig(thresholds=[1e-13]), name="rmc")


PRESETS = {
    "fixed-bern-0.7": _preset_fixed_bern_07,
    "fixed-bern-0.9": _preset_fixed_bern_09,
    "moving-object-0.8": _preset_moving_object,
    "pw-const-noisy": _preset_pw_const_noisy,
    "rmc": _preset_rmc,
}


def preset(name):
    """Full :class:`ExperimentConfig` for a named preset."""
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigInvalid({"preset": f"unknown preset {name!r}; choose from "
                                       + ", ".join(PRESETS)}) from None


__all__ = [
    "GenerationConfig", "AlgorithmConfig", "ReportConfig", "ExperimentConfig",
    "parse_config", "load_config", "preset", "PRESETS",
]
