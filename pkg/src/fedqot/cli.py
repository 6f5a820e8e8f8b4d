"""Command line entry point: ``fedqot <subcommand>``.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 parity failure
(simulate only), 4 ECN rejected by the TCN's eligibility check.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import logging
import sys
from pathlib import Path

from . import experiment, qot
from .errors import FedQoTError, SchemaError, UsageError, ValidationError
from .fedavg import Hyperparams, centralized_train, run_training, write_history_csv
from .nn import ModelSpec, deserialize_params, evaluate_accuracy, serialize_params

log = logging.getLogger("fedqot")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PARITY, EXIT_REJECTED = 0, 1, 2, 3, 4


@dataclasses.dataclass
class RunConfig:
    mode: str = ""
    seed: int = 0
    init_seed: int | None = None
    shuffle_seed: int | None = None
    n_samples: int = experiment.DEFAULT_N_SAMPLES
    n_domains: int = experiment.DEFAULT_N_DOMAINS
    test_fraction: float = experiment.DEFAULT_TEST_FRACTION
    hidden_dims: list = dataclasses.field(default_factory=lambda: list(experiment.DEFAULT_HIDDEN))
    eta: float = 0.01
    local_epochs: int = 2
    batch_size: int = 64
    rounds: int = 30
    parity_tolerance: float = experiment.DEFAULT_PARITY_TOLERANCE
    workers: int = 1
    data_dir: str | None = None
    data: str | None = None
    stats: str | None = None
    model: str | None = None
    out: str | None = None
    listen: str = "127.0.0.1:8765"
    endpoint: str = "127.0.0.1:8765"
    expected_ecns: int = 3
    ecn_id: str | None = None
    min_samples: int = 100
    round_deadline: float = 60.0
    tls_cert: str | None = None
    tls_key: str | None = None
    tls_ca: str | None = None

    @property
    def resolved_init_seed(self) -> int:
        return self.seed + 1 if self.init_seed is None else self.init_seed

    @property
    def hyperparams(self) -> Hyperparams:
        shuffle = self.seed + 2 if self.shuffle_seed is None else self.shuffle_seed
        return Hyperparams(self.eta, self.local_epochs, self.batch_size, self.rounds, shuffle)

    def model_spec(self, input_dim: int) -> ModelSpec:
        return ModelSpec(input_dim, tuple(self.hidden_dims), 2)

    def validate(self) -> None:
        required = {
            "ecn": ("data", "ecn_id"),
            "evaluate": ("model", "data"),
        }.get(self.mode, ())
        for name in required:
            if getattr(self, name) in (None, ""):
                raise UsageError(f"--{name.replace('_', '-')} is required for {self.mode}")
        if self.mode == "tcn" and not self.data_dir:
            raise UsageError("--data-dir is required for tcn (it holds test.csv and stats.json)")
        if bool(self.tls_cert) != bool(self.tls_key):
            raise UsageError("--tls-cert and --tls-key must be given together")
        if not 0.0 < self.test_fraction < 1.0:
            raise UsageError("test_fraction must lie in (0, 1)")
        if self.parity_tolerance < 0:
            raise UsageError("parity_tolerance must be non-negative")
        if self.expected_ecns < 1:
            raise UsageError("expected_ecns must be at least 1")
        if self.workers < 1:
            raise UsageError("workers must be at least 1")
        self.hyperparams  # noqa: B018  (raises on invalid values)
        self.model_spec(1)


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    unknown = set(data) - _FIELDS
    if unknown:
        raise UsageError(f"unknown config fields: {', '.join(sorted(unknown))}")
    return data


def build_config(args) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    for name in _FIELDS:
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    values["mode"] = args.command
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    cfg.validate()
    return cfg


# -- data loading -------------------------------------------------------------

def _out_dir(cfg, default) -> Path:
    path = Path(cfg.out or default)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _prepared(cfg) -> experiment.Prepared:
    """Generated in memory, or read back from a ``gen-data`` directory."""
    if not cfg.data_dir:
        return experiment.prepare(cfg.n_samples, cfg.n_domains, cfg.seed, cfg.test_fraction)
    root = Path(cfg.data_dir)
    schema = qot.FeatureSchema.from_dict(json.loads((root / "schema.json").read_text(encoding="utf-8")))
    stats = qot.load_stats(root / "stats.json")
    train = []
    k = 0
    while (root / f"train_{k}.csv").exists():
        train.append(qot.load_csv(root / f"train_{k}.csv", schema))
        k += 1
    if not train:
        raise UsageError(f"no train_<k>.csv files in {root}")
    test = qot.load_csv(root / "test.csv", schema)
    prepared = experiment.Prepared(schema, stats, [], train, test)
    prepared.partitions = [qot.encode_and_normalize(p, schema, stats)[0] for p in train]
    prepared.test = qot.encode_and_normalize(test, schema, stats)[0]
    return prepared


def _save_model(params, path) -> None:
    Path(path).write_bytes(serialize_params(params))


def _timestamp() -> str:
    return datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# -- commands -----------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig) -> int:
    out = _out_dir(cfg, "data")
    domains = qot.generate_samples(cfg.n_samples, cfg.n_domains, cfg.seed)
    prepared = experiment.split_domains(domains, cfg.test_fraction, cfg.seed)
    for k, samples in enumerate(domains):
        qot.save_csv(samples, out / f"domain_{k}.csv")
    for k, samples in enumerate(prepared.train_samples):
        qot.save_csv(samples, out / f"train_{k}.csv")
    qot.save_csv(prepared.test_samples, out / "test.csv")
    (out / "schema.json").write_text(prepared.schema.to_json() + "\n", encoding="utf-8")
    qot.save_stats(prepared.stats, out / "stats.json")
    sizes = ", ".join(str(len(d)) for d in domains)
    print(f"wrote {len(domains)} domain files ({sizes} samples) to {out}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    prepared = _prepared(cfg)
    cmp = experiment.compare(prepared, cfg.hidden_dims, cfg.hyperparams, cfg.resolved_init_seed,
                             workers=cfg.workers)
    out = _out_dir(cfg, "results")
    rows = [("centralized", cmp.centralized), ("distributed", cmp.distributed)]
    with open(out / "report.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("scenario,accuracy\n")
        for name, acc in rows:
            fh.write(f"{name},{acc!r}\n")
    passed = cmp.gap_pp <= cfg.parity_tolerance
    lines = [f"# fedqot simulate report, generated {_timestamp()}",
             f"samples={cfg.n_samples if not cfg.data_dir else 'from ' + cfg.data_dir} "
             f"hidden={list(cfg.hidden_dims)} hyperparams={cfg.hyperparams.to_dict()} "
             f"init_seed={cfg.resolved_init_seed}",
             f"{'scenario':<14}accuracy"]
    lines += [f"{name:<14}{acc * 100:.2f}%" for name, acc in rows]
    lines.append(f"gap {cmp.gap_pp:.3f} pp, tolerance {cfg.parity_tolerance} pp: {'PASS' if passed else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    write_history_csv(cmp.history, out / "history.csv")
    _save_model(cmp.final_distributed, out / "model_distributed.bin")
    _save_model(cmp.final_centralized, out / "model_centralized.bin")
    print(text, end="")
    return EXIT_OK if passed else EXIT_PARITY


def cmd_centralized(cfg: RunConfig) -> int:
    prepared = _prepared(cfg)
    spec = cfg.model_spec(prepared.schema.width)
    params = centralized_train(prepared.pooled, spec, cfg.hyperparams, cfg.resolved_init_seed)
    out = _out_dir(cfg, "results")
    _save_model(params, out / "model_centralized.bin")
    print(f"centralized accuracy {evaluate_accuracy(params, prepared.test):.6f}")
    return EXIT_OK


def cmd_tcn(cfg: RunConfig) -> int:
    from .protocol import TrainingCoordinator, parse_endpoint, server_ssl_context

    root = Path(cfg.data_dir)
    schema = qot.FeatureSchema.from_dict(json.loads((root / "schema.json").read_text(encoding="utf-8")))
    stats = qot.load_stats(root / "stats.json")
    test, _ = qot.encode_and_normalize(qot.load_csv(root / "test.csv", schema), schema, stats)
    host, port = parse_endpoint(cfg.listen)
    ctx = server_ssl_context(cfg.tls_cert, cfg.tls_key) if cfg.tls_cert else None
    out = _out_dir(cfg, "results")
    coordinator = TrainingCoordinator(
        cfg.model_spec(schema.width), cfg.hyperparams, expected_ecns=cfg.expected_ecns,
        schema_hash=schema.hash, init_seed=cfg.resolved_init_seed, eval_data=test, feature_stats=stats,
        min_samples=cfg.min_samples, round_deadline=cfg.round_deadline)
    bound = coordinator.listen(host, port, ctx)
    print(f"TCN listening on {bound[0]}:{bound[1]}, waiting for {cfg.expected_ecns} ECNs", flush=True)
    outcome = coordinator.run()
    _save_model(outcome.final_params, out / "model_tcn.bin")
    write_history_csv(outcome.history, out / "history_tcn.csv")
    print(f"distributed accuracy {outcome.final_accuracy:.6f}")
    return EXIT_OK


def cmd_ecn(cfg: RunConfig) -> int:
    from .protocol import EcnClient, ExitStatus, client_ssl_context

    schema = qot.default_schema(cfg.n_domains)
    if cfg.data_dir and (Path(cfg.data_dir) / "schema.json").exists():
        schema = qot.FeatureSchema.from_dict(
            json.loads((Path(cfg.data_dir) / "schema.json").read_text(encoding="utf-8")))
    samples = qot.load_csv(cfg.data, schema)
    ctx = client_ssl_context(cfg.tls_ca) if cfg.tls_ca else None
    client = EcnClient(cfg.endpoint, samples, cfg.ecn_id, schema=schema, ssl_context=ctx)
    status = client.run()
    if status == ExitStatus.DONE:
        acc = client.final_accuracy
        print(f"{cfg.ecn_id}: done after {len(client.updates)} rounds"
              + ("" if acc is None else f", global accuracy {acc:.6f}"))
        return EXIT_OK
    print(f"{cfg.ecn_id}: {status.name.lower()}: {client.reason}", file=sys.stderr)
    return EXIT_REJECTED if status == ExitStatus.REJECTED else EXIT_RUNTIME


def cmd_evaluate(cfg: RunConfig) -> int:
    try:
        params = deserialize_params(Path(cfg.model).read_bytes())
    except OSError as exc:
        raise UsageError(f"cannot read model: {exc}") from None
    schema = qot.default_schema(cfg.n_domains)
    samples = qot.load_csv(cfg.data, schema)
    stats = qot.load_stats(cfg.stats) if cfg.stats else None
    dataset, _ = qot.encode_and_normalize(samples, schema, stats)
    print(f"accuracy {evaluate_accuracy(params, dataset):.6f}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "simulate": cmd_simulate,
    "centralized": cmd_centralized,
    "tcn": cmd_tcn,
    "ecn": cmd_ecn,
    "evaluate": cmd_evaluate,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _hidden(text):
    try:
        dims = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"hidden dims must be comma-separated integers, got {text!r}")
    return dims


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="master seed (data; init and shuffle derive from it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--n-samples", dest="n_samples", type=int)
    data.add_argument("--domains", dest="n_domains", type=int)
    data.add_argument("--test-fraction", dest="test_fraction", type=float)
    data.add_argument("--data-dir", dest="data_dir", help="directory written by gen-data")

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--hidden", dest="hidden_dims", type=_hidden, help="e.g. 3072 or 128,64")
    train.add_argument("--eta", type=float)
    train.add_argument("--local-epochs", dest="local_epochs", type=int)
    train.add_argument("--batch-size", dest="batch_size", type=int)
    train.add_argument("--rounds", type=int)
    train.add_argument("--init-seed", dest="init_seed", type=int)
    train.add_argument("--shuffle-seed", dest="shuffle_seed", type=int)

    parser = _Parser(prog="fedqot", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("gen-data", parents=[common, data], help="write synthetic per-domain CSVs")
    sim = sub.add_parser("simulate", parents=[common, data, train],
                         help="in-process federated vs centralized comparison")
    sim.add_argument("--parity-tolerance", dest="parity_tolerance", type=float, help="percentage points")
    sim.add_argument("--workers", type=int, help="threads for per-ECN updates")
    sub.add_parser("centralized", parents=[common, data, train], help="train on pooled data only")
    tcn = sub.add_parser("tcn", parents=[common, data, train], help="run the training coordinator")
    tcn.add_argument("--listen", help="host:port")
    tcn.add_argument("--expected-ecns", dest="expected_ecns", type=int)
    tcn.add_argument("--min-samples", dest="min_samples", type=int)
    tcn.add_argument("--round-deadline", dest="round_deadline", type=float, help="seconds")
    tcn.add_argument("--tls-cert", dest="tls_cert")
    tcn.add_argument("--tls-key", dest="tls_key")
    ecn = sub.add_parser("ecn", parents=[common, data], help="run an edge contributor node")
    ecn.add_argument("--endpoint", help="TCN host:port")
    ecn.add_argument("--data", help="local samples CSV")
    ecn.add_argument("--ecn-id", dest="ecn_id")
    ecn.add_argument("--tls-ca", dest="tls_ca")
    ev = sub.add_parser("evaluate", parents=[common, data], help="accuracy of a saved model on a CSV")
    ev.add_argument("--model", help="parameter blob")
    ev.add_argument("--data", help="samples CSV")
    ev.add_argument("--stats", help="stats.json written by gen-data")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[cfg.mode](cfg)
    except (UsageError, SchemaError, ValidationError) as exc:
        print(f"fedqot {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FedQoTError, OSError) as exc:
        print(f"fedqot {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
