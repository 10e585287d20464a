"""Command-line surface of the toolkit.

Commands: train-toy, gen-data, explain, sweep, similarity,
compare-spectra, bias-study, inspect-model.  Exit codes: 0 ok, 2 usage,
3 I/O, 4 numeric/resource, 5 model format, 6 completed with a
region-boundary warning.  The SPECXAI_BUDGET environment variable (or
--budget) bounds the size of any explicit operator.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import modelio, netgraph, pwa, spectral, toylab
from .errors import (
    CapabilityError,
    DimensionError,
    ModelFormatError,
    NormalizationError,
    NumericError,
    RegionBoundaryError,
    ResourceError,
    SpecxaiError,
    TrainingError,
    UsageError,
)
from .reports import (
    array_checksum,
    fmt,
    write_csv_rows,
    write_heatmap,
    write_pgm,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_FORMAT = 5
EXIT_BOUNDARY = 6


@dataclass
class ExplainRequest:
    """Everything one explain run needs; layer may be an index or "sweep"."""

    model_path: str
    input_path: str | None = None
    dataset_path: str | None = None
    sample_index: int | None = None
    layer: int | str = "last"
    output_index: int | None = None
    top_k: int = 4
    reduce: bool = False
    average: bool = False
    out_dir: str = "report"
    budget: int | None = None

    def __post_init__(self):
        if self.top_k < 1:
            raise UsageError("top-k must be >= 1")
        if self.input_path is None and self.sample_index is None:
            raise UsageError("need --input or --dataset with --sample-index")


def _load_input(req: ExplainRequest, model: netgraph.NetworkModel) -> np.ndarray:
    if req.input_path is not None:
        x = modelio.load_tensor(req.input_path)
    else:
        if req.dataset_path is None:
            raise UsageError("--sample-index needs --dataset")
        data = modelio.load_tensor(req.dataset_path)
        try:
            x = data[int(req.sample_index)]
        except IndexError as exc:
            raise UsageError(f"sample index {req.sample_index} out of range") from exc
    want = int(np.prod(model.input_shape))
    if x.size != want:
        raise DimensionError(
            f"input has {x.size} elements, model expects {want}"
        )
    return x.reshape(model.input_shape)


def _resolve_layer(layer, n_layers: int) -> int:
    if layer in ("last", None):
        return n_layers
    l_s = int(layer)
    if not 1 <= l_s <= n_layers:
        raise UsageError(f"split layer {l_s} outside [1, {n_layers}]")
    return l_s


def write_explain_report(
    model: netgraph.NetworkModel, x: np.ndarray, req: ExplainRequest, l_s: int,
    out_dir: Path,
) -> dict:
    """One spectral report directory; returns the symbolic summary dict."""
    out_dir.mkdir(parents=True, exist_ok=True)
    split = spectral.split_at(
        model, x, l_s, output_index=req.output_index, budget=req.budget
    )
    sym = spectral.symbolic_from_split(model, split, reduce=req.reduce)
    decomp = spectral.alpha_decomposition(split)
    rank = split.svd.rank_used
    reduced = spectral.reduce_coefficients(decomp.alphas[:rank])

    # components beyond the numerical rank are zeros; keep reports compact
    spectra_rows = [("sigma", k, float(split.svd.sigma[k])) for k in range(rank)]
    spectra_rows += [
        ("reduced", int(k), float(a))
        for k, a in zip(reduced.spectral_index_map, reduced.a_hat)
    ]
    write_csv_rows(out_dir / "spectra.csv", ["series", "k", "value"], spectra_rows)
    write_csv_rows(
        out_dir / "alpha.csv",
        ["k", "sigma", "c", "psi", "alpha"],
        [
            (k, float(split.svd.sigma[k]), float(split.c[k]),
             float(decomp.psi[k]), float(decomp.alphas[k]))
            for k in range(rank)
        ],
    )

    ranked = sorted(
        sym.terms,
        key=lambda t: -abs(t.weight if t.weight is not None else t.alpha),
    )
    term_entries = []
    for rank_pos, term in enumerate(ranked[: req.top_k]):
        write_heatmap(out_dir / f"sv_{rank_pos}", term.map)
        if req.average:
            avg = spectral.contract_input_vector(
                model, split.svd.V[:, term.spectral_index], x,
                spectral_index=term.spectral_index, average=True,
            )
            write_heatmap(out_dir / f"sv_{rank_pos}_avg", avg.values)
    for term in sym.terms:
        term_entries.append(
            {
                "k": term.spectral_index,
                "alpha": term.alpha,
                "weight": term.weight,
                "map_sha256": array_checksum(term.map),
            }
        )

    write_heatmap(out_dir / "bias_spread", sym.bias_map)
    write_csv_rows(
        out_dir / "bias_vector.csv", ["i", "b"],
        [(i, float(v)) for i, v in enumerate(split.bias)],
    )

    summary = {
        "format_version": 1,
        "model": model.name,
        "l_s": l_s,
        "output_index": sym.output_index,
        "reduce": req.reduce,
        "rank_used": rank,
        "reduction_iterations": reduced.iterations,
        "grid": list(sym.bias_map.shape),
        "y_j": sym.target,
        "sum_alpha_plus_bias": sym.reconstructed,
        "residual": sym.residual,
        "remainder": sym.remainder,
        "bias_per_cell": float(sym.bias_map.ravel()[0]) if sym.bias_map.size else 0.0,
        "terms": term_entries,
    }
    (out_dir / "symbolic.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(
        f"reconstruction l_s={l_s}: y_j={fmt(sym.target)} "
        f"sum={fmt(sym.reconstructed)} difference={fmt(sym.reconstructed - sym.target)}"
    )
    return summary


def cmd_explain(req: ExplainRequest) -> int:
    model = modelio.load_model(req.model_path)
    x = _load_input(req, model)
    out_dir = Path(req.out_dir)
    boundary = pwa.extract_affine(model, x, budget=req.budget).boundary
    if req.layer == "sweep":
        rows = []
        for l_s in range(1, len(model.layers) + 1):
            try:
                summary = write_explain_report(
                    model, x, req, l_s, out_dir / f"ls_{l_s:02d}"
                )
                rows.append(
                    (l_s, summary["residual"], summary["rank_used"], "")
                )
            except ResourceError as exc:
                rows.append((l_s, float("nan"), 0, str(exc)))
        write_csv_rows(
            out_dir / "sweep_summary.csv",
            ["l_s", "residual", "rank_used", "error"],
            rows,
        )
    else:
        l_s = _resolve_layer(req.layer, len(model.layers))
        write_explain_report(model, x, req, l_s, out_dir)
    if boundary:
        print(
            "warning: input lies on a linear-region boundary "
            "(a pre-activation is exactly zero)",
            file=sys.stderr,
        )
        return EXIT_BOUNDARY
    return EXIT_OK


def cmd_train_toy(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    squares = toylab.SquaresConfig(count=args.count, seed=args.seed)
    images, angles = toylab.generate_squares(squares)
    modelio.save_tensor(images, out / "dataset.sxt")
    write_csv_rows(
        out / "angles.csv", ["index", "angle_deg"],
        [(i, float(a)) for i, a in enumerate(angles)],
    )
    cfg = toylab.TrainConfig(
        use_bias=args.bias,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        seed=args.seed if args.train_seed is None else args.train_seed,
    )
    flat = images.reshape(images.shape[0], -1)
    model, losses = toylab.train_autoencoder(flat, cfg)
    modelio.save_model(model, out / "model.sxm")
    write_csv_rows(
        out / "loss.csv", ["epoch", "loss"],
        [(i, float(v)) for i, v in enumerate(losses)],
    )
    if losses.size:
        print(f"trained {model.name}: final loss {fmt(losses[-1])}")
    else:
        print(f"initialized {model.name} (no training epochs)")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    squares = toylab.SquaresConfig(count=args.count, seed=args.seed)
    images, angles = toylab.generate_squares(squares)
    modelio.save_tensor(images, out / "dataset.sxt")
    write_csv_rows(
        out / "angles.csv", ["index", "angle_deg"],
        [(i, float(a)) for i, a in enumerate(angles)],
    )
    print(f"wrote {images.shape[0]} samples to {out}")
    return EXIT_OK


def cmd_similarity(args) -> int:
    model = modelio.load_model(args.model)
    data = modelio.load_tensor(args.dataset)
    if data.shape[0] < 2:
        raise UsageError("similarity needs a dataset with at least 2 samples")
    indices = _parse_indices(args.samples, data.shape[0])
    l_s = _resolve_layer(args.layer, len(model.layers))
    vectors = []
    labels = []
    for idx in indices:
        x = data[idx].reshape(model.input_shape)
        split = spectral.split_at(model, x, l_s, output_index=0, budget=args.budget)
        for k in range(min(args.k, split.svd.V.shape[1])):
            vectors.append(split.svd.V[:, k])
            labels.append(f"s{idx}_sv{k}")
    gram = spectral.sv_similarity(vectors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_rows(
        out / "gram.csv",
        ["row", "col", "value"],
        [
            (labels[i], labels[j], float(gram[i, j]))
            for i in range(len(labels))
            for j in range(len(labels))
        ],
    )
    write_pgm(out / "gram.pgm", gram)
    print(f"gram matrix {gram.shape[0]}x{gram.shape[1]} written to {out}")
    return EXIT_OK


def cmd_compare_spectra(args) -> int:
    model = modelio.load_model(args.model)
    data = modelio.load_tensor(args.dataset)
    indices = _parse_indices(args.samples, data.shape[0])
    flat = data.reshape(data.shape[0], -1)
    report = toylab.compare_spectra(model, flat, indices, top_k=args.k)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_rows(
        out / "data_spectrum.csv",
        ["k", "sigma", "normalized"],
        [
            (k, float(s), float(n))
            for k, (s, n) in enumerate(
                zip(report.data_sigma, report.data_sigma_normalized)
            )
        ],
    )
    shape = model.display_shape or model.input_shape
    grid = shape[:2] if len(shape) == 3 else shape
    for i, vec in enumerate(report.data_top_vectors):
        write_heatmap(out / f"data_sv_{i}", _as_grid(vec, grid))
    sample_entries = []
    for spec in report.samples:
        tag = f"op_{spec.sample_index}"
        write_csv_rows(
            out / f"{tag}_spectrum.csv",
            ["k", "sigma", "normalized"],
            [
                (k, float(s), float(n))
                for k, (s, n) in enumerate(zip(spec.sigma, spec.sigma_normalized))
            ],
        )
        for i, vec in enumerate(spec.top_vectors):
            write_heatmap(out / f"{tag}_sv_{i}", _as_grid(vec, grid))
        for i, cmap in enumerate(spec.top_contractions):
            write_heatmap(out / f"{tag}_contraction_{i}", cmap.values)
        for i, vec in enumerate(spec.top_left_vectors):
            write_heatmap(out / f"{tag}_left_sv_{i}", _as_grid(vec, grid))
        sample_entries.append(
            {
                "sample_index": spec.sample_index,
                "rank_used": spec.rank_used,
                "degenerate": spec.degenerate,
                "sigma_ratio_at_bottleneck": _sigma_ratio(
                    spec.sigma, report.bottleneck
                ),
            }
        )
    summary = {
        "format_version": 1,
        "bottleneck": report.bottleneck,
        "data_sigma_ratio_at_bottleneck": _sigma_ratio(
            report.data_sigma, report.bottleneck
        ),
        "samples": sample_entries,
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"spectra comparison written to {out}")
    return EXIT_OK


def _sigma_ratio(sigma: np.ndarray, k: int) -> float | None:
    if sigma.size <= k or sigma[0] == 0.0:
        return None
    return float(sigma[k] / sigma[0])


def _as_grid(vec: np.ndarray, grid) -> np.ndarray:
    size = int(np.prod(grid))
    if vec.size == size:
        return vec.reshape(grid)
    return np.atleast_2d(vec)


def cmd_bias_study(args) -> int:
    model = modelio.load_model(args.model)
    if args.input:
        x = modelio.load_tensor(args.input)
    else:
        data = modelio.load_tensor(args.dataset)
        x = data[args.sample_index]
    x = x.reshape(model.input_shape)
    study = toylab.bias_study(model, x)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shape = model.display_shape or model.input_shape
    grid = shape[:2] if len(shape) == 3 else shape
    for i in study.bias_layers:
        write_heatmap(out / f"beta_layer_{i:02d}", _as_grid(study.betas[i], grid))
    write_heatmap(out / "bias_total", _as_grid(study.total, grid))
    write_heatmap(out / "ux", _as_grid(study.ux, grid))
    write_heatmap(out / "output", _as_grid(study.output, grid))
    summary = {
        "format_version": 1,
        "model": model.name,
        "bias_layers": list(study.bias_layers),
        "residual": study.residual,
    }
    (out / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"bias study residual {fmt(study.residual)} written to {out}")
    return EXIT_OK


def cmd_inspect_model(args) -> int:
    model = modelio.load_model(args.model)
    if args.json:
        manifest, _ = modelio.build_manifest(model, "-")
        manifest.pop("blob", None)
        print(json.dumps(manifest, indent=2))
    else:
        shapes = model.shapes()
        print(f"name: {model.name}")
        print(f"input shape: {model.input_shape}")
        n_params = 0
        for i, layer in enumerate(model.layers):
            print(f"  layer {i + 1}: {type(layer).__name__} -> {shapes[i + 1]}")
            for attr in ("weight", "kernel", "bias", "skip", "w_a", "w_b"):
                value = getattr(layer, attr, None)
                if value is not None:
                    n_params += value.size
        print(f"output shape: {shapes[-1]}")
        print(f"parameters: {n_params}")
    if args.eval:
        x = modelio.load_tensor(args.eval)
        batch = _eval_batch(x, model)
        for row in batch:
            y = netgraph.forward(model, row)[-1].ravel()
            print(",".join(fmt(v) for v in y))
    return EXIT_OK


def _eval_batch(x: np.ndarray, model: netgraph.NetworkModel) -> list[np.ndarray]:
    want = int(np.prod(model.input_shape))
    if x.size == want:
        return [x.reshape(model.input_shape)]
    if x.ndim >= 2 and int(np.prod(x.shape[1:])) == want:
        return [row.reshape(model.input_shape) for row in x]
    raise DimensionError(
        f"eval tensor shape {x.shape} does not match model input {model.input_shape}"
    )


def _parse_indices(spec_str: str, n: int) -> list[int]:
    if spec_str in (None, "", "all"):
        return list(range(n))
    try:
        indices = [int(tok) for tok in spec_str.split(",") if tok != ""]
    except ValueError as exc:
        raise UsageError(f"bad sample list: {spec_str!r}") from exc
    for idx in indices:
        if not 0 <= idx < n:
            raise UsageError(f"sample index {idx} out of range [0, {n})")
    return indices


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specxai",
        description="Spectral decomposition toolkit for locally linear networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train the rotated-squares autoencoder")
    bias = p.add_mutually_exclusive_group()
    bias.add_argument("--bias", dest="bias", action="store_true", default=False)
    bias.add_argument("--no-bias", dest="bias", action="store_false")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--train-seed", type=int, default=None,
                   help="training seed (defaults to --seed)")
    p.add_argument("--count", type=int, default=2048)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gen-data", help="generate the rotated-squares dataset")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--count", type=int, default=2048)
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="spectral report for one input")
    p.add_argument("--model", required=True)
    p.add_argument("--input")
    p.add_argument("--dataset")
    p.add_argument("--sample-index", type=int)
    p.add_argument("--layer", default="last", help='split layer, "last", or "sweep"')
    p.add_argument("--output-index", type=int, default=None,
                   help="output row to explain (default: argmax)")
    p.add_argument("--top-k", type=int, default=4)
    p.add_argument("--reduce", action="store_true")
    p.add_argument("--average", action="store_true",
                   help="also emit channel-averaged heatmaps")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="one explain report per split layer")
    p.add_argument("--model", required=True)
    p.add_argument("--input")
    p.add_argument("--dataset")
    p.add_argument("--sample-index", type=int)
    p.add_argument("--output-index", type=int, default=None)
    p.add_argument("--top-k", type=int, default=4)
    p.add_argument("--reduce", action="store_true")
    p.add_argument("--average", action="store_true")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("similarity", help="gram matrix of SVs across samples")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--samples", default="all", help='comma list or "all"')
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--layer", default="last")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare-spectra",
                       help="data-matrix spectrum vs. operator spectra")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--samples", default="0", help='comma list or "all"')
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bias-study", help="per-layer bias contribution maps")
    p.add_argument("--model", required=True)
    p.add_argument("--input")
    p.add_argument("--dataset")
    p.add_argument("--sample-index", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("inspect-model", help="print a model summary")
    p.add_argument("--model", required=True)
    p.add_argument("--json", action="store_true")
    p.add_argument("--eval", help="tensor file to run forward (row batch allowed)")
    return parser


def _dispatch(args) -> int:
    if args.command == "train-toy":
        return cmd_train_toy(args)
    if args.command == "gen-data":
        return cmd_gen_data(args)
    if args.command in ("explain", "sweep"):
        req = ExplainRequest(
            model_path=args.model,
            input_path=args.input,
            dataset_path=args.dataset,
            sample_index=args.sample_index,
            layer="sweep" if args.command == "sweep" else args.layer,
            output_index=args.output_index,
            top_k=args.top_k,
            reduce=args.reduce,
            average=args.average,
            out_dir=args.out,
            budget=args.budget,
        )
        return cmd_explain(req)
    if args.command == "similarity":
        return cmd_similarity(args)
    if args.command == "compare-spectra":
        return cmd_compare_spectra(args)
    if args.command == "bias-study":
        return cmd_bias_study(args)
    if args.command == "inspect-model":
        return cmd_inspect_model(args)
    raise UsageError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except RegionBoundaryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BOUNDARY
    except (
        NumericError,
        ResourceError,
        TrainingError,
        DimensionError,
        CapabilityError,
        NormalizationError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SpecxaiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
