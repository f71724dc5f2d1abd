"""Command-line pipeline driver: segment -> fit -> price -> benchmark.

Stages hand off through JSON artifacts in the configured output directory,
matching the batch cadence of the segmentation cycle (re-segment monthly,
re-fit and re-price daily). Every artifact embeds the SHA-256 of the config
it was produced from; no timestamps are written, so reruns on identical
inputs are byte-identical.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 infeasible
problem, 4 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ALGORITHMS
from .demand import DemandModel
from .errors import InfeasibleError, SchemaError, SolverError, TariffkitError
from .ingest import load_readings, load_tariffs, resample, resample_tariffs
from .pricing import benchmark, build_problem, solve_multiple, solve_uniform, write_solution_csv
from .segmentation import SegmentationConfig, SegmentationResult, fit_group_models, run_cycle
from .synthgen import default_cost_shape, generate_costs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4

CONFIG_SCHEMA = {
    "format_version": None,
    "seed": None,
    "paths": {"readings": None, "tariffs": None, "out_dir": None},
    "ingest": {"target_slots": None, "lax": None},
    "segmentation": {"k_range": None, "algorithms": None, "g_final": None,
                     "merge_strategy": None, "attribute_mode": None,
                     "attribute_params": None, "restarts": None, "period": None},
    "fit": {"lambda": None},
    "pricing": {"p_min": None, "p_max": None, "flat_price": None,
                "revenue_cap": None, "starts": None, "cost": None},
    "benchmark": {"runs": None, "noise_sd": None, "cost_base": None},
}


def _reject_unknown(data: dict, schema: dict, prefix: str = "") -> None:
    for key, value in data.items():
        if key not in schema:
            raise SchemaError(f"config: unknown key {prefix + key!r}")
        sub = schema[key]
        if isinstance(sub, dict):
            if not isinstance(value, dict):
                raise SchemaError(f"config: {prefix + key!r} must be an object")
            _reject_unknown(value, sub, prefix + key + ".")


@dataclass
class PipelineConfig:
    """Validated pipeline configuration (see README for the file format)."""

    readings_path: str
    tariffs_path: str
    out_dir: str
    seed: int = 0
    target_slots: int = 24
    lax: bool = False
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    forgetting: float = 0.98
    p_min: object = "cost"
    p_max: object = 25.0
    flat_price: float | None = 10.0
    revenue_cap: float | None = None
    starts: int = 32
    cost: list | None = None
    runs: int = 10
    cost_noise_sd: float = 0.10
    cost_base: list | None = None
    sha256: str = ""

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise FileNotFoundError(f"config file not found: {path}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise SchemaError("config root must be a JSON object")
        _reject_unknown(data, CONFIG_SCHEMA)
        version = data.get("format_version", 1)
        if version != 1:
            raise SchemaError(f"unsupported config format_version {version}")
        paths = data.get("paths", {})
        for req in ("readings", "tariffs", "out_dir"):
            if req not in paths:
                raise SchemaError(f"config: paths.{req} is required")
        seg_raw = dict(data.get("segmentation", {}))
        seg_kwargs = {}
        if "k_range" in seg_raw:
            kr = seg_raw["k_range"]
            if not (isinstance(kr, list) and len(kr) == 2):
                raise SchemaError("config: segmentation.k_range must be [lo, hi]")
            seg_kwargs["k_range"] = (int(kr[0]), int(kr[1]))
        if "algorithms" in seg_raw:
            algos = tuple(seg_raw["algorithms"])
            for a in algos:
                if a not in ALGORITHMS:
                    raise SchemaError(f"config: unknown algorithm {a!r}")
            seg_kwargs["algorithms"] = algos
        for src, dst in (("g_final", "g_final"), ("merge_strategy", "merge_strategy"),
                         ("attribute_mode", "attribute_mode"),
                         ("attribute_params", "attribute_params"),
                         ("restarts", "restarts"), ("period", "period")):
            if src in seg_raw:
                seg_kwargs[dst] = seg_raw[src]
        seed = int(data.get("seed", 0))
        fit = data.get("fit", {})
        pricing = data.get("pricing", {})
        bench = data.get("benchmark", {})
        ingest = data.get("ingest", {})
        try:
            seg = SegmentationConfig(seed=seed, forgetting=float(fit.get("lambda", 0.98)),
                                     **seg_kwargs)
        except ValueError as exc:
            raise SchemaError(f"config: {exc}") from None
        cfg = cls(
            readings_path=paths["readings"],
            tariffs_path=paths["tariffs"],
            out_dir=paths["out_dir"],
            seed=seed,
            target_slots=int(ingest.get("target_slots", 24)),
            lax=bool(ingest.get("lax", False)),
            segmentation=seg,
            forgetting=float(fit.get("lambda", 0.98)),
            p_min=pricing.get("p_min", "cost"),
            p_max=pricing.get("p_max", 25.0),
            flat_price=pricing.get("flat_price", 10.0),
            revenue_cap=pricing.get("revenue_cap"),
            starts=int(pricing.get("starts", 32)),
            cost=pricing.get("cost"),
            runs=int(bench.get("runs", 10)),
            cost_noise_sd=float(bench.get("noise_sd", 0.10)),
            cost_base=bench.get("cost_base"),
        )
        canonical = json.dumps(data, sort_keys=True).encode()
        cfg.sha256 = hashlib.sha256(canonical).hexdigest()
        if not 0 < cfg.forgetting <= 1:
            raise SchemaError("config: fit.lambda must be in (0, 1]")
        return cfg


def _write_artifact(payload: dict, path: Path, sha: str) -> None:
    payload = dict(payload)
    payload["config_sha256"] = sha
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    logger.info("wrote %s", path)


def _load_inputs(cfg: PipelineConfig):
    readings = load_readings(cfg.readings_path, lax=cfg.lax)
    tariffs = load_tariffs(cfg.tariffs_path, lax=cfg.lax)
    if readings.slots_per_day != cfg.target_slots:
        readings = resample(readings, cfg.target_slots)
    tariffs = {g: (resample_tariffs(ts, cfg.target_slots)
                   if ts.slots_per_day != cfg.target_slots else ts)
               for g, ts in tariffs.items()}
    return readings, tariffs


def _load_grouping(path) -> dict[str, str]:
    data = json.loads(Path(path).read_text())
    if "membership" in data:  # a SegmentationResult artifact works directly
        return dict(data["membership"])
    if "groups" in data:
        return dict(data["groups"])
    raise SchemaError(f"{path}: expected a 'groups' map or a segmentation artifact")


def cmd_segment(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    _apply_overrides(cfg, args)
    readings, tariffs = _load_inputs(cfg)
    prior = None
    initial = None
    if args.prior:
        prior = SegmentationResult.from_dict(json.loads(Path(args.prior).read_text()))
    elif args.groups:
        initial = _load_grouping(args.groups)
    result = run_cycle(readings, tariffs, cfg.segmentation, prior=prior,
                       initial_groups=initial)
    out = Path(args.out or cfg.out_dir) / "segmentation.json"
    _write_artifact(result.to_dict(), out, cfg.sha256)
    print(out)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    _apply_overrides(cfg, args)
    readings, tariffs = _load_inputs(cfg)
    seg_path = Path(args.segmentation or Path(cfg.out_dir) / "segmentation.json")
    segmentation = SegmentationResult.from_dict(json.loads(seg_path.read_text()))
    models = fit_group_models(readings, tariffs, segmentation,
                              forgetting=cfg.forgetting)
    payload = {
        "format_version": 1,
        "lambda": cfg.forgetting,
        "period": segmentation.period,
        "groups": [m.to_dict() for m in models],
    }
    out = Path(args.out or cfg.out_dir) / "models.json"
    _write_artifact(payload, out, cfg.sha256)
    print(out)
    return EXIT_OK


def _load_models(path) -> list[DemandModel]:
    data = json.loads(Path(path).read_text())
    return [DemandModel.from_dict(m) for m in data["groups"]]


def _cost_vector(cfg: PipelineConfig) -> np.ndarray:
    if cfg.cost is not None:
        return np.asarray(cfg.cost, dtype=float)
    shape = default_cost_shape()
    if shape.shape[0] != cfg.target_slots:
        raise SchemaError("pricing.cost is required when target_slots != 24")
    return shape


def cmd_price(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    _apply_overrides(cfg, args)
    models = _load_models(args.models or Path(cfg.out_dir) / "models.json")
    cost = _cost_vector(cfg)
    problem = build_problem(models, cost, p_min=cfg.p_min, p_max=cfg.p_max,
                            flat_price=cfg.flat_price, revenue_cap=cfg.revenue_cap)
    payload: dict = {"format_version": 1, "cost_cents": cost.tolist(),
                     "flat_price": cfg.flat_price, "revenue_cap": cfg.revenue_cap}
    names = [m.group for m in models]
    primary = None
    if not args.uniform_only:
        multi = solve_multiple(problem, seed=cfg.seed, starts=cfg.starts)
        payload["multiple"] = multi.to_dict()
        primary = multi
    if args.uniform or args.uniform_only:
        uni = solve_uniform(problem, seed=cfg.seed, starts=cfg.starts)
        payload["uniform"] = uni.to_dict()
        primary = primary or uni
    out_dir = Path(args.out or cfg.out_dir)
    _write_artifact(payload, out_dir / "pricing.json", cfg.sha256)
    write_solution_csv(primary, cost, out_dir / "pricing.csv", group_names=names)
    print(out_dir / "pricing.json")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    _apply_overrides(cfg, args)
    models = _load_models(args.models or Path(cfg.out_dir) / "models.json")
    cost = _cost_vector(cfg)
    problem = build_problem(models, cost, p_min=cfg.p_min, p_max=cfg.p_max,
                            flat_price=cfg.flat_price, revenue_cap=cfg.revenue_cap)
    base = np.asarray(cfg.cost_base, dtype=float) if cfg.cost_base else cost

    def draw(run, rng):
        return generate_costs(1, base, noise_sd=cfg.cost_noise_sd,
                              seed=int(rng.integers(2 ** 63)))[0]

    report = benchmark(problem, runs=cfg.runs, cost_generator=draw, seed=cfg.seed,
                       starts=cfg.starts)
    out = Path(args.out or cfg.out_dir) / "benchmark.json"
    _write_artifact(report.to_dict(), out, cfg.sha256)
    print(out)
    return EXIT_OK


def _apply_overrides(cfg: PipelineConfig, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
        cfg.segmentation.seed = args.seed
    if getattr(args, "lax", False):
        cfg.lax = True
    if getattr(args, "g_final", None) is not None:
        cfg.segmentation.g_final = args.g_final
    if getattr(args, "forgetting", None) is not None:
        cfg.forgetting = args.forgetting
        cfg.segmentation.forgetting = args.forgetting
    if getattr(args, "flat_price", None) is not None:
        cfg.flat_price = args.flat_price if args.flat_price >= 0 else None
    if getattr(args, "revenue_cap", None) is not None:
        cfg.revenue_cap = args.revenue_cap if args.revenue_cap > 0 else None
    if getattr(args, "runs", None) is not None:
        cfg.runs = args.runs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tariffkit",
        description="Segment smart-meter customers, fit per-group price-demand "
                    "models, and optimize multiple dynamic tariffs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="pipeline config JSON")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")
        sp.add_argument("--lax", action="store_true",
                        help="accept unknown CSV columns")

    sp = sub.add_parser("segment", help="run one segmentation cycle")
    common(sp)
    sp.add_argument("--groups", default=None,
                    help="JSON file mapping customer_id to initial tariff group")
    sp.add_argument("--prior", default=None,
                    help="previous segmentation artifact to seed the cycle")
    sp.add_argument("--g-final", dest="g_final", type=int, default=None)
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("fit", help="fit per-group demand models")
    common(sp)
    sp.add_argument("--segmentation", default=None, help="segmentation artifact path")
    sp.add_argument("--lambda", dest="forgetting", type=float, default=None,
                    help="forgetting factor override")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("price", help="solve the tariff optimization")
    common(sp)
    sp.add_argument("--models", default=None, help="fitted models artifact path")
    sp.add_argument("--flat-price", dest="flat_price", type=float, default=None,
                    help="average-price constraint override (negative disables)")
    sp.add_argument("--revenue-cap", dest="revenue_cap", type=float, default=None,
                    help="revenue cap override (non-positive disables)")
    sp.add_argument("--uniform", action="store_true",
                    help="also solve the uniform-pricing baseline")
    sp.add_argument("--uniform-only", dest="uniform_only", action="store_true",
                    help="solve only the uniform-pricing baseline")
    sp.set_defaults(func=cmd_price)

    sp = sub.add_parser("benchmark", help="compare multiple vs uniform pricing "
                                          "over simulated cost draws")
    common(sp)
    sp.add_argument("--models", default=None, help="fitted models artifact path")
    sp.add_argument("--runs", type=int, default=None)
    sp.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (SchemaError, TariffkitError, ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
