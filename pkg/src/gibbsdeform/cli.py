"""Command line entry point: JSON experiment configs, subcommands and machine-readable reports."""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .configuration import (BondSet, Configuration, read_bonds_csv, read_configuration_csv,
                            write_configuration_csv)
from .deform import InternalError, deform, inverse_deform, sigma_stats, verify_deform_invariants
from .geometry import Window
from .potentials import (Decomposed, InvalidPotential, NumericError, model_constants, potential_from_spec,
                         range_bound_general, range_bound_hardcore)
from .sampler import (EventSpec, Rect, SamplerConfig, change_of_var_test, estimate_intensity,
                      lattice_ring_boundary, mw_test, run_chain, run_chains)
from .taper import CutoffFunction, TaperParams, c_of_n, c_of_n_bound

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

SCHEMA = {
    "schema": None,
    "seed": None,
    "potential": {"kind", "norm", "r0", "eps", "p", "scales", "hardcoreRadius", "amplitude",
                  "bumpRadius", "shoulder", "shoulderOuter"},
    "model": {"z", "xi", "epsilon", "tau", "R", "n", "nPrime"},
    "sampler": {"sweeps", "burnIn", "thinning", "proposalMix", "moveScale", "boundary", "maxCount"},
    "events": None,
    "deform": {"configuration", "bonds", "direction", "roundTrip"},
    "covtest": {"nSamples", "intensity"},
    "verify": {"configurations", "intensity", "cfScale"},
    "output": {"dir"},
}
EVENT_KEYS = {"kind", "region", "k"}
DEFAULTS = {
    "schema": 1,
    "seed": 0,
    "potential": {"kind": "hardcore", "norm": "euclidean", "r0": 1.0, "eps": 0.1},
    "model": {"z": 0.5, "xi": 1.0, "epsilon": 0.1, "tau": 0.4, "R": 6.0, "n": 16.0, "nPrime": 2.0},
    "sampler": {"sweeps": 200, "burnIn": 20, "thinning": 1, "proposalMix": [0.35, 0.35, 0.30],
                "moveScale": None, "boundary": "empty", "maxCount": None},
    "events": [],
    "deform": {"configuration": None, "bonds": None, "direction": "forward", "roundTrip": True},
    "covtest": {"nSamples": 2000, "intensity": 0.25},
    "verify": {"configurations": 5, "intensity": 1.0, "cfScale": 1.0},
    "output": {"dir": "."},
}


class ConfigError(ValueError):
    pass


def _merge(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
    if raw.get("schema", 1) != 1:
        raise ConfigError(f"unsupported schema {raw.get('schema')!r}; expected 1")
    cfg = json.loads(json.dumps(DEFAULTS))
    for key, allowed in SCHEMA.items():
        if key not in raw:
            continue
        val = raw[key]
        if isinstance(allowed, set):
            if not isinstance(val, dict):
                raise ConfigError(f"{key} must be an object")
            for sub in val:
                if sub not in allowed:
                    raise ConfigError(f"unknown key {key}.{sub!r}")
            if key == "potential" and "kind" in val and val["kind"] != cfg["potential"]["kind"]:
                cfg["potential"] = {}
            cfg[key].update(val)
        else:
            cfg[key] = val
    for i, ev in enumerate(cfg["events"]):
        if not isinstance(ev, dict):
            raise ConfigError(f"events[{i}] must be an object")
        for sub in ev:
            if sub not in EVENT_KEYS:
                raise ConfigError(f"unknown key events[{i}].{sub!r}")
    return cfg


@dataclass
class Experiment:
    raw: dict
    seed: int
    potential: object
    taper: TaperParams | None
    z: float
    xi: float
    epsilon: float
    n_prime: float
    events: list = field(default_factory=list)

    @property
    def model(self) -> dict:
        return self.raw["model"]


def _num(d: dict, key: str, where: str) -> float:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key} must be a finite number")
    return float(v)


def build_experiment(cfg: dict, seed: int | None = None, check_xi: bool = True) -> Experiment:
    m = cfg["model"]
    z, xi, eps = (_num(m, k, "model") for k in ("z", "xi", "epsilon"))
    tau, R, n, n_prime = (_num(m, k, "model") for k in ("tau", "R", "n", "nPrime"))
    if not z > 0:
        raise ConfigError("model.z must be positive")
    if not xi >= 1:
        raise ConfigError("model.xi must be at least 1")
    if not 0 <= tau <= 0.5:
        raise ConfigError("model.tau must lie in [0, 1/2]")
    if not (n_prime < R < n):
        raise ConfigError("need model.nPrime < model.R < model.n")
    pot = dict(cfg["potential"])
    pot.setdefault("eps", eps)
    try:
        U = potential_from_spec(pot)
    except (InvalidPotential, ValueError, TypeError) as exc:
        raise ConfigError(f"potential: {exc}") from exc
    try:
        taper = TaperParams.build(U.core, tau, R, n)
    except ValueError as exc:
        # the constants report does not need a taper, so a zero enlargement is allowed there
        if check_xi or eps > 0:
            raise ConfigError(f"model: {exc}") from exc
        taper = None
    if check_xi:
        consts = model_constants(U, z, xi, eps)
        if not consts.valid:
            raise ConfigError(f"activity condition violated: z*xi*cXi = {z * xi * consts.cXi:.6g} >= 1")
    events = []
    for i, ev in enumerate(cfg["events"]):
        try:
            region = Rect(*[float(v) for v in ev["region"]])
            e = EventSpec(ev["kind"], region, int(ev.get("k", 0)))
            e.check_cylinder(n_prime)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"events[{i}]: {exc}") from exc
        events.append(e)
    s = cfg["seed"] if seed is None else seed
    if isinstance(s, bool) or not isinstance(s, int) or not 0 <= s < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg["seed"] = s
    return Experiment(cfg, s, U, taper, z, xi, eps, n_prime, events)


def sampler_config(ex: Experiment, seed: int | None = None) -> SamplerConfig:
    s = ex.raw["sampler"]
    n = ex.taper.n
    kind = s.get("boundary", "empty")
    if kind == "empty":
        boundary = None
    elif kind == "latticeRing":
        boundary = lattice_ring_boundary(n, ex.potential.core)
    else:
        raise ConfigError("sampler.boundary must be 'empty' or 'latticeRing'")
    try:
        return SamplerConfig(ex.potential, ex.z, n, boundary, int(s["sweeps"]), int(s["burnIn"]),
                             int(s["thinning"]), ex.seed if seed is None else seed, tuple(s["proposalMix"]),
                             s.get("moveScale"), s.get("maxCount"))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"sampler: {exc}") from exc


# ---- commands ------------------------------------------------------------------------------

def cmd_constants(ex: Experiment) -> tuple[dict, int]:
    U = ex.potential
    consts = model_constants(U, ex.z, ex.xi, ex.epsilon)
    bound = (range_bound_general if isinstance(U, Decomposed) else range_bound_hardcore)(ex.n_prime, consts)
    rep = {"cK": consts.cK, "cF": consts.cF, "cXi": consts.cXi, "cPsi": consts.cPsi, "cU": consts.cU,
           "validity": consts.valid, "analyticRangeBound": bound}
    if ex.taper is not None:
        rep.update(cOfN=c_of_n(ex.taper), cOfNBound=c_of_n_bound(ex.taper))
    if not consts.valid:
        rep["explanation"] = (f"z*xi*cXi = {ex.z * ex.xi * consts.cXi:.6g} >= 1, the cluster expansion "
                              "bound diverges")
    return rep, EXIT_OK


def _frames_csv(path: Path, frames):
    with open(path, "w") as fh:
        fh.write("frame,x,y,interior\n")
        for k, f in enumerate(frames):
            for (a, b), inside in zip(f.points, f.interior):
                fh.write(f"{k},{a:.17g},{b:.17g},{int(inside)}\n")


def cmd_sample(ex: Experiment, out: Path, chains: int = 1) -> tuple[dict, int]:
    sc = sampler_config(ex)
    frames = run_chain(sc) if chains <= 1 else [f for c in run_chains(sc, chains) for f in c]
    _frames_csv(out / "frames.csv", frames)
    rep = {"frames": len(frames), "chains": max(chains, 1)}
    if len(frames) >= 10:
        rep["intensity"] = estimate_intensity(frames, Window(sc.n)).as_dict()
    return rep, EXIT_OK


def _load_deform_input(ex: Experiment):
    d = ex.raw["deform"]
    W = Window(ex.taper.n)
    if d.get("configuration"):
        X = read_configuration_csv(d["configuration"], W)
    else:
        from .sampler import sample_poisson
        X = sample_poisson(Window(ex.taper.n + 2), 1.0, None, ex.seed)
        X = Configuration(X.points, W)
    B = read_bonds_csv(d["bonds"], len(X)) if d.get("bonds") else BondSet()
    return X, B


def cmd_deform(ex: Experiment, out: Path) -> tuple[dict, int]:
    X, B = _load_deform_input(ex)
    d = ex.raw["deform"]
    direction = d.get("direction", "forward")
    res = deform(X, B, ex.taper, direction)
    write_configuration_csv(out / "transformed.csv", res.transformed)
    variant = "general" if isinstance(ex.potential, Decomposed) else "hardcore"
    psi = ex.potential if variant == "general" else None
    stats = sigma_stats(X, B, ex.taper, variant, psi, ex.n_prime)
    inv = verify_deform_invariants(X, B, ex.taper, direction, ex.potential, ex.n_prime, out=res)
    rep = {"pivots": res.pivotOrder.tolist(), "tauValues": res.pivotValues.tolist(),
           "logDensity": res.logDensity, "flaggedPivots": res.flagged.tolist(),
           "sigmaStats": stats.as_dict(), "invariantReport": inv}
    ok = inv["passed"]
    if d.get("roundTrip", True):
        back = inverse_deform(res.transformed, B, ex.taper, direction)
        err = float(np.max(np.abs(back.recovered.points - X.points))) if len(X) else 0.0
        rep["roundTripError"] = err
        ok = ok and err <= 1e-8
    return rep, EXIT_OK if ok else EXIT_FAIL


def cmd_verify(ex: Experiment, out: Path) -> tuple[dict, int]:
    from .sampler import birth_acceptance, sample_poisson
    from .potentials import check_no_core_overlap, hamiltonian
    from .taper import Q, q, tau_n, tau_n_deriv
    from scipy import integrate

    v = ex.raw["verify"]
    p = ex.taper
    scale = float(v.get("cfScale", 1.0))
    if scale != 1.0:
        p = TaperParams(p.tau, p.R, p.n, p.cK, CutoffFunction(p.core, p.cF * scale, p.cutoff.safety))
    checks = {}

    def record(key, passed, **info):
        checks[key] = {"pass": bool(passed), **info}

    ks = np.linspace(0.5, 100, 20)
    q_err = max(abs(Q(k) - integrate.quad(q, 0, k, points=[1.7632228343518965], limit=200)[0]) for k in ks)
    record("taperClosedForm", q_err <= 1e-9, margin=q_err)
    s_pts = np.linspace(p.R + 0.3, p.n - 0.3, 15)
    fd = np.array([(tau_n(p, s + 1e-6) - tau_n(p, s - 1e-6)) / 2e-6 for s in s_pts])
    d_err = float(np.max(np.abs(fd - tau_n_deriv(p, s_pts))))
    record("taperDerivative", d_err <= 1e-6, margin=d_err)
    rng = np.random.default_rng(ex.seed)
    agg = {}
    rt_max = 0.0
    for _ in range(int(v.get("configurations", 5))):
        X = sample_poisson(Window(p.n + 2), float(v.get("intensity", 1.0)), None, rng)
        X = Configuration(X.points, Window(p.n), check=False)
        res = deform(X, None, p)
        inv = verify_deform_invariants(X, None, p, "forward", None, ex.n_prime, out=res)
        for key, val in inv.items():
            if isinstance(val, bool) and key not in ("passed", "isGood"):
                agg[key] = agg.get(key, True) and val
        back = inverse_deform(res.transformed, None, p)
        if len(X):
            rt_max = max(rt_max, float(np.max(np.abs(back.recovered.points - X.points))))
        if inv.get("isGood"):
            bwd = deform(X, None, p, "backward")
            agg["densityBound"] = agg.get("densityBound", True) and res.logDensity + bwd.logDensity >= -1
    for key, val in agg.items():
        record(key, val)
    record("roundTrip", rt_max <= 1e-8, margin=rt_max)
    sc = sampler_config(ex)
    frames = run_chain(SamplerConfig(**{**sc.__dict__, "sweeps": min(sc.sweeps, 50), "burnIn": 5}))
    record("noCoreOverlap", all(check_no_core_overlap(ex.potential, f) for f in frames))
    pt = np.array([0.1, -0.2])
    a = birth_acceptance(sc, np.zeros((0, 2)), pt)
    pB, pD, _ = sc.proposalMix
    expected = min(1.0, (pD / pB) * sc.z * sc.window.area)
    record("detailedBalanceRatio", abs(a - expected) <= 1e-12, margin=abs(a - expected))
    ok = all(c["pass"] for c in checks.values())
    return {"checks": checks, "failing": [k for k, c in checks.items() if not c["pass"]], "pass": ok}, \
        EXIT_OK if ok else EXIT_FAIL


def cmd_mwtest(ex: Experiment, out: Path, chains: int = 1) -> tuple[dict, int]:
    if not ex.events:
        raise ConfigError("mwtest needs a nonempty events list")
    sc = sampler_config(ex)
    if chains <= 1:
        frames = run_chain(sc, interior_only=True)
    else:
        seeds = np.random.SeedSequence(ex.seed).spawn(chains)
        frames = []
        for ss in seeds:
            c = SamplerConfig(**{**sc.__dict__, "seed": int(ss.generate_state(1, np.uint64)[0])})
            frames.extend(run_chain(c, interior_only=True))
    rep = mw_test(None, ex.events, ex.taper.tau, frames=frames, n_prime=ex.n_prime)
    return rep, EXIT_OK if rep["pass"] else EXIT_FAIL


def cmd_covtest(ex: Experiment, out: Path) -> tuple[dict, int]:
    c = ex.raw["covtest"]
    rep = change_of_var_test(ex.taper, ex.potential, None, int(c["nSamples"]), ex.seed,
                             float(c["intensity"]), ex.n_prime)
    return rep, EXIT_OK if rep["pass"] else EXIT_FAIL


COMMANDS = {"constants": cmd_constants, "sample": cmd_sample, "deform": cmd_deform,
            "verify": cmd_verify, "mwtest": cmd_mwtest, "covtest": cmd_covtest}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else str(f)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gibbsdeform", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON experiment config (schema 1)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--chains", type=int, default=1, help="independent chains (sample, mwtest)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(args.config.read_text()) if args.config else {}
        cfg = _merge(raw)
        ex = build_experiment(cfg, args.seed, check_xi=args.command != "constants")
        out = args.out or Path(cfg["output"]["dir"])
        out.mkdir(parents=True, exist_ok=True)
        fn = COMMANDS[args.command]
        if args.command == "constants":
            rep, code = fn(ex)
        elif args.command in ("sample", "mwtest"):
            rep, code = fn(ex, out, args.chains)
        else:
            rep, code = fn(ex, out)
    except (ConfigError, json.JSONDecodeError, OSError) as exc:
        print(json.dumps({"error": "invalid-config", "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, InternalError, FloatingPointError) as exc:
        print(json.dumps({"error": "numeric", "message": str(exc)}), file=sys.stderr)
        return EXIT_NUMERIC
    doc = _jsonable({"command": args.command, "seed": ex.seed, "config": cfg, "report": rep,
                     "exitCode": code})
    (out / f"{args.command}.json").write_text(json.dumps(doc, indent=2))
    print(json.dumps(doc, indent=2))
    return code


if __name__ == "__main__":
    sys.exit(main())
