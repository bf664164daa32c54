"""``superclt`` command line: spectral table, limit constants, simulation and verification.

Configuration is a JSON document::

    {
      "model": {"dimension": 1, "drift_c": 1.0, "diffusion": 2.0,
                "branch_a": 2.0, "branch_b": 1.0, "branch_rate": 1.0},
      "functions": [{"name": "f3", "level": [3, 1]},
                    {"name": "mix", "coeffs": [{"n": [0], "value": 1.0}, {"n": [2], "value": 0.5}]}],
      "sim": {"scale_n": 200, "checkpoints": [3.5], "horizon_t": 6.0, "replicas": 4000, "master_seed": 7},
      "tests": {"level": 0.001, "min_surviving": 100, "variance_band": 0.25,
                "clt": {"f": "f3", "h": "h2", "g": "g1", "t": 3.5},
                "covariance_pairs": [["f3", "f4"]]},
      "output": {"spectral": "spectral.csv", "limits": "limits.csv",
                 "replicas": "replicas.csv", "report": "report.json"}
    }

Exit codes: 0 success or passing verdict, 2 validation or I/O error,
3 resource error, 4 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import cltlab
from .errors import InputError, InsufficientDataError, ResourceError, TruncationError
from .moments import beta2, eta2, limit_decomposition, rho2, sigma2
from .simulator import SimPlan, replica_rows, run_ensemble, write_replica_csv
from .spectral import SpectralFunction, SuperOUConfig, classify, eigenvalue, level_regime, multiplicity

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RESOURCE = 3
EXIT_FAILED = 4

MODEL_FIELDS = ("dimension", "drift_c", "diffusion", "branch_a", "branch_b", "branch_rate", "k_max")
SIM_FIELDS = ("scale_n", "initial_measure", "checkpoints", "horizon_t", "replicas", "master_seed",
              "population_cap", "method")
TEST_FIELDS = ("level", "min_surviving", "variance_band", "clt", "covariance_pairs")
CLT_FIELDS = ("f", "h", "g", "t")
OUTPUT_FIELDS = ("spectral", "limits", "replicas", "report")
TOP_FIELDS = ("model", "functions", "sim", "tests", "output")


def fmt(x) -> str:
    return format(float(x), ".17g")


def _check_keys(section: str, data, allowed) -> dict:
    if not isinstance(data, dict):
        raise InputError(f"{section} must be a JSON object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        where = f"{section}." if section != "config" else ""
        raise InputError("unknown config field(s): " + ", ".join(where + k for k in unknown))
    return data


@dataclass
class TestSettings:
    level: float = cltlab.DEFAULT_LEVEL
    min_surviving: int = 100
    variance_band: float = 0.25
    clt: dict | None = None
    covariance_pairs: list = field(default_factory=list)

    __test__ = False


@dataclass
class ExperimentConfig:
    model: SuperOUConfig
    functions: dict
    sim: SimPlan | None
    tests: TestSettings
    output: dict

    @classmethod
    def from_dict(cls, data: dict, seed: int | None = None, replicas: int | None = None) -> "ExperimentConfig":
        _check_keys("config", data, TOP_FIELDS)
        model_data = _check_keys("model", data.get("model", {}), MODEL_FIELDS)
        model = SuperOUConfig(**model_data)

        functions = {}
        raw_fns = data.get("functions", [])
        if not isinstance(raw_fns, list):
            raise InputError("functions must be a list")
        for item in raw_fns:
            _check_keys("functions[]", item, ("name", "level", "coeffs"))
            name = item.get("name")
            if not isinstance(name, str) or not name:
                raise InputError("every function needs a non-empty name")
            if name in functions:
                raise InputError(f"duplicate function name {name!r}")
            if ("level" in item) == ("coeffs" in item):
                raise InputError(f"function {name!r} needs exactly one of 'level' or 'coeffs'")
            if "level" in item:
                k, j = item["level"]
                functions[name] = SpectralFunction.level(int(k), int(j), model.dimension)
            else:
                functions[name] = SpectralFunction.from_json({"coeffs": item["coeffs"]}, dimension=model.dimension)
            if functions[name].dimension != model.dimension:
                raise InputError(f"function {name!r} has the wrong dimension")
            classify(functions[name], model)  # range-checks indices against k_max

        sim = None
        if "sim" in data or seed is not None or replicas is not None:
            sim_data = dict(_check_keys("sim", data.get("sim", {}), SIM_FIELDS))
            if "scale_n" not in sim_data:
                raise InputError("sim.scale_n is required")
            if seed is not None:
                sim_data["master_seed"] = seed
            if replicas is not None:
                sim_data["replicas"] = replicas
            if "initial_measure" in sim_data:
                atoms = []
                for atom in sim_data["initial_measure"]:
                    _check_keys("sim.initial_measure[]", atom, ("point", "mass"))
                    atoms.append((tuple(atom["point"]), atom["mass"]))
                for p, _ in atoms:
                    if len(p) != model.dimension:
                        raise InputError(f"initial point {p} does not have dimension {model.dimension}")
                sim_data["initial_measure"] = tuple(atoms)
            if "checkpoints" in sim_data:
                sim_data["checkpoints"] = tuple(sim_data["checkpoints"])
            sim = SimPlan(**sim_data)

        test_data = dict(_check_keys("tests", data.get("tests", {}), TEST_FIELDS))
        if test_data.get("clt") is not None:
            clt = _check_keys("tests.clt", test_data["clt"], CLT_FIELDS)
            missing = [k for k in CLT_FIELDS if k not in clt]
            if missing:
                raise InputError("tests.clt is missing " + ", ".join(missing))
            for k in ("f", "h", "g"):
                if clt[k] not in functions:
                    raise InputError(f"tests.clt.{k} names unknown function {clt[k]!r}")
        for pair in test_data.get("covariance_pairs", []):
            if len(pair) != 2 or any(p not in functions for p in pair):
                raise InputError(f"covariance pair {pair!r} must name two configured functions")
        tests = TestSettings(**test_data)
        if not 0 < tests.level < 1:
            raise InputError("tests.level must lie in (0, 1)")
        if tests.variance_band <= 0:
            raise InputError("tests.variance_band must be positive")

        output = dict(_check_keys("output", data.get("output", {}), OUTPUT_FIELDS))
        return cls(model, functions, sim, tests, output)

    def canonical(self) -> dict:
        """Everything that determines results; thread count and output paths excluded."""
        return {
            "model": self.model.to_dict(),
            "functions": {name: f.to_json() for name, f in self.functions.items()},
            "sim": None if self.sim is None else self.sim.to_dict(),
            "tests": {
                "level": self.tests.level,
                "min_surviving": self.tests.min_surviving,
                "variance_band": self.tests.variance_band,
                "clt": self.tests.clt,
                "covariance_pairs": [list(p) for p in self.tests.covariance_pairs],
            },
        }

    @property
    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def require_sim(self) -> SimPlan:
        if self.sim is None:
            raise InputError("this command needs a 'sim' section")
        return self.sim


def load_config(path: str, seed: int | None = None, replicas: int | None = None) -> ExperimentConfig:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(data, seed=seed, replicas=replicas)


# ----------------------------------------------------------------------------
# commands


def spectral_rows(cfg: ExperimentConfig):
    model = cfg.model
    yield ["k", "lambda_k", "multiplicity", "regime", "config_digest"]
    for k in range(1, model.max_level + 1):
        yield [str(k), fmt(eigenvalue(model, k)), str(multiplicity(k, model.dimension)), level_regime(model, k), cfg.digest]


def cmd_spectral(cfg: ExperimentConfig, out: str | None) -> int:
    rows = list(spectral_rows(cfg))
    if out:
        _write_csv(out, rows)
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(c.rjust(w) for c, w in zip(r[:4], widths)))
    crit = [r[0] for r in rows[1:] if r[3] == "critical"]
    print(f"large levels: {', '.join(r[0] for r in rows[1:] if r[3] == 'large')}; "
          f"critical levels: {', '.join(crit) if crit else 'none'}; config_digest: {cfg.digest}")
    return EXIT_OK


def limits_rows(cfg: ExperimentConfig):
    model = cfg.model
    origin = np.zeros(model.dimension)
    yield ["function_id", "regime", "gamma", "sigma2", "rho2", "beta2", "eta2_at_origin", "normalization",
           "decomposition_variance", "config_digest"]
    for name, f in cfg.functions.items():
        cls = classify(f, model)
        law = limit_decomposition(f, model)
        s = r = b = e = ""
        if cls.regime == "small":
            s = fmt(sigma2(f, model))
        elif cls.regime == "critical":
            r = fmt(rho2(f, model))
        elif cls.regime == "large":
            b = fmt(beta2(f, model))
        if cls.regime != "zero" and classify(cls.leading, model).regime == "large":
            e = fmt(eta2(f, origin if model.dimension > 1 else 0.0, model))
        gamma = "inf" if cls.regime == "zero" else str(cls.gamma)
        yield [name, cls.regime, gamma, s, r, b, e, law.normalization, fmt(law.variance), cfg.digest]


def cmd_limits(cfg: ExperimentConfig, out: str | None) -> int:
    rows = list(limits_rows(cfg))
    if out:
        _write_csv(out, rows)
    else:
        _write_csv_stream(sys.stdout, rows)
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, out: str | None, threads: int):
    plan = cfg.require_sim()
    ens = run_ensemble(plan, cfg.model, cfg.functions, workers=threads)
    path = out or cfg.output.get("replicas")
    if path:
        write_replica_csv(ens, path, cfg.digest)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        for row in replica_rows(ens, cfg.digest):
            writer.writerow(row)
        sys.stdout.write(buf.getvalue())
    return ens


def run_verification(cfg: ExperimentConfig, ens) -> cltlab.VerificationReport:
    model = cfg.model
    settings = cfg.tests
    report = cltlab.VerificationReport(config_digest=cfg.digest)
    report.extend(cltlab.verify_moments(ens, cfg.functions, model))
    report.extend(cltlab.verify_martingales(ens, model))
    report.extend(cltlab.verify_extinction(ens, model))
    if settings.clt:
        c = settings.clt
        fns = cfg.functions
        report.extend(
            cltlab.verify_joint_clt(ens, fns[c["f"]], fns[c["h"]], fns[c["g"]], float(c["t"]), model,
                                    level=settings.level, min_surviving=settings.min_surviving,
                                    variance_band=settings.variance_band)
        )
        if settings.covariance_pairs:
            report.extend(cltlab.verify_covariances(ens, [tuple(p) for p in settings.covariance_pairs], float(c["t"]),
                                                    model, variance_band=settings.variance_band))
    elif settings.covariance_pairs:
        raise InputError("covariance_pairs need tests.clt.t to choose the evaluation time")
    return report


def cmd_verify(cfg: ExperimentConfig, out: str | None, threads: int) -> int:
    plan = cfg.require_sim()
    ens = run_ensemble(plan, cfg.model, cfg.functions, workers=threads)
    if cfg.output.get("replicas"):
        write_replica_csv(ens, cfg.output["replicas"], cfg.digest)
    report = run_verification(cfg, ens)
    text = json.dumps(_json_floats(report.to_json()), indent=2) + "\n"
    path = out or cfg.output.get("report")
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for line in report.summary_lines():
        print(line, file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAILED


class _Float17(float):
    def __repr__(self) -> str:
        return fmt(self)


def _json_floats(obj):
    """Make the JSON encoder print floats with 17 significant digits."""
    if isinstance(obj, float):
        return _Float17(obj)
    if isinstance(obj, dict):
        return {k: _json_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_floats(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_floats(obj.item())
    return obj


def _write_csv_stream(fh, rows):
    writer = csv.writer(fh, lineterminator="\n")
    for row in rows:
        writer.writerow(row)


def _write_csv(path: str, rows):
    with open(path, "w", newline="") as fh:
        _write_csv_stream(fh, rows)


# ----------------------------------------------------------------------------
# entry point


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="superclt", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("spectral", "eigenvalues, multiplicities and regimes"),
        ("limits", "limit constants for the configured functions (CSV)"),
        ("simulate", "run the particle ensemble and write replica CSV"),
        ("verify", "simulate and run every verification suite (JSON report)"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--seed", type=_u64)
        p.add_argument("--replicas", type=_positive)
        p.add_argument("--threads", type=_positive)
    return parser


def resolve_threads(arg: int | None) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("SUPERCLT_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise InputError(f"SUPERCLT_THREADS must be an integer, got {env!r}") from None
        if value < 1:
            raise InputError("SUPERCLT_THREADS must be positive")
        return value
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = resolve_threads(args.threads)
        cfg = load_config(args.config, seed=args.seed, replicas=args.replicas)
        if args.command == "spectral":
            return cmd_spectral(cfg, args.out or cfg.output.get("spectral"))
        if args.command == "limits":
            return cmd_limits(cfg, args.out or cfg.output.get("limits"))
        if args.command == "simulate":
            cmd_simulate(cfg, args.out, threads)
            return EXIT_OK
        return cmd_verify(cfg, args.out, threads)
    except InsufficientDataError as exc:
        print(f"superclt: verification failed: {exc}", file=sys.stderr)
        return EXIT_FAILED
    except ResourceError as exc:
        print(f"superclt: resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, TypeError, TruncationError) as exc:
        print(f"superclt: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"superclt: I/O error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
