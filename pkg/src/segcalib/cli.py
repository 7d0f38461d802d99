"""Command-line surface for batch evaluation and figure generation.

Subcommands:

    metrics     macro/micro calibration reports for a prediction manifest
    diagram     per-case reliability diagrams (SVG + PNG + CSV)
    histogram   dataset reliability histogram per class
    temp-scale  fit a scalar temperature on logits and re-evaluate
    grad-check  verify the analytic loss gradients by finite differences
    train-toy   train one synthetic-harness variant, emit predictions
    sweep       bin-count or loss-weight sensitivity sweep
    synth       materialize a synthetic dataset on disk
    ace-loss    loss value + gradient for one volume pair (binding hook)

All outputs land in --out (default: $SEGCALIB_OUT, else the working
directory) and are byte-identical when rerun on identical inputs.  Exit
codes: 0 success, 1 runtime failure (the message names the offending
case or file), 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .binning import BinningConfig, Kernel
from .figures import save_diagram_png, save_histogram_png, save_sweep_png
from .harness import (
    VARIANTS,
    replication_data_config,
    replication_train_config,
    train,
)
from .harness import sweep as run_sweep
from .harness import write_sweep_csv
from .losses import ace_loss
from .reliability import (
    calibration_metrics,
    compose_hierarchical_classes,
    evaluated_classes,
    finalize,
    macro_report,
    merge,
    micro_report,
    tally_image,
    zero_tally,
)
from .synthetic import generate_dataset, make_dataset
from .temperature import apply_temperature, fit_temperature, softmax
from .viz import (
    DEFAULT_GAMMA,
    DEFAULT_ROWS,
    build_dataset_histogram,
    build_diagram,
    render_svg,
    write_curve_csv,
    write_histogram_csv,
)
from .volume_io import load_case_label, load_manifest, read_volume, write_manifest, write_volume

OUT_ENV = "SEGCALIB_OUT"


class CliError(Exception):
    """Runtime failure reported with exit code 1."""


# --------------------------------------------------------------------------
# shared plumbing


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _binning(args) -> BinningConfig:
    return BinningConfig(num_bins=args.bins, kernel=Kernel(args.kernel))


def _include_background(args) -> bool | None:
    return True if args.include_background else None


def _load_case(entry, num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Probabilities (C, *spatial) float64 and integer labels for one case."""
    if entry.prediction is not None:
        probs = read_volume(entry.prediction).astype(np.float64)
    elif entry.logits is not None:
        probs = softmax(read_volume(entry.logits).astype(np.float64), axis=0)
    else:
        raise CliError(
            f"case '{entry.case_id}' has neither prediction nor logits; "
            "metrics need model outputs, not just images"
        )
    labels = load_case_label(entry, num_classes)
    return probs, labels


def _case_map(fn, entries, jobs: int) -> list:
    """Apply fn per case, optionally in a thread pool.

    Results always come back in manifest order, so every downstream merge
    happens in the same order regardless of the parallelism level.
    """
    if jobs <= 1:
        return [fn(entry) for entry in entries]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, entries))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.4f}"


def _pm(mean: float, std: float | None) -> str:
    if std is None:
        return _fmt(mean)
    return f"{_fmt(mean)} ± {_fmt(std)}"


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = [
        "  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
        for row in rows
    ]
    return "\n".join(lines) + "\n"


def _report_rows(tag: str, report, class_names: list[str]) -> list[list[str]]:
    rows = []
    for k, name in enumerate(class_names):
        if not report.evaluated[k]:
            continue
        rows.append([
            tag, name, _fmt(report.ace[k]), _fmt(report.ece[k]), _fmt(report.mce[k]),
        ])
    rows.append([
        tag, "mean",
        _pm(report.mean_ace, report.std_ace),
        _pm(report.mean_ece, report.std_ece),
        _pm(report.mean_mce, report.std_mce),
    ])
    return rows


def format_report_text(macro, micro, class_names: list[str]) -> str:
    header = [["scope", "class", "ACE", "ECE", "MCE"]]
    rows = header + _report_rows("macro", macro, class_names)
    rows += _report_rows("micro", micro, class_names)
    return _align(rows)


# --------------------------------------------------------------------------
# metrics


def _evaluated_reports(manifest, config, args):
    """Per-image reports plus the merged streaming tally."""
    include_bg = _include_background(args)
    c = manifest.num_classes

    def work(entry):
        probs, labels = _load_case(entry, c)
        return tally_image(probs, labels, config)

    tallies = _case_map(work, manifest.cases, args.jobs)
    total = zero_tally(c, config)
    reports = []
    for tally in tallies:
        total = merge(total, tally)
        reports.append(
            calibration_metrics(
                finalize(tally),
                evaluated_classes(tally.present_classes(), include_bg),
            )
        )
    micro = micro_report(total, evaluated_classes(total.present_classes(), include_bg))
    return reports, total, micro


def _hec_metrics(manifest, config, args) -> dict:
    index = {name: i for i, name in enumerate(manifest.classes)}
    hec_map = {
        group: [index[m] for m in members] for group, members in manifest.hec.items()
    }
    c = len(hec_map)

    def work(entry):
        probs, labels = _load_case(entry, manifest.num_classes)
        probs_hec, labels_hec = compose_hierarchical_classes(probs, labels, hec_map)
        return tally_image(probs_hec, labels_hec, config, marginal=True)

    tallies = _case_map(work, manifest.cases, args.jobs)
    total = zero_tally(c, config)
    reports = []
    for tally in tallies:
        total = merge(total, tally)
        reports.append(
            calibration_metrics(finalize(tally), tally.present_classes())
        )
    macro = macro_report(reports, missing_policy=args.missing)
    micro = micro_report(total, total.present_classes())
    return {
        "groups": list(hec_map),
        "macro": macro.to_dict(),
        "micro": micro.to_dict(),
    }


def cmd_metrics(args) -> int:
    manifest = load_manifest(args.manifest)
    config = _binning(args)
    reports, _, micro = _evaluated_reports(manifest, config, args)
    macro = macro_report(reports, missing_policy=args.missing)
    payload = {
        "manifest": str(args.manifest),
        "num_cases": len(manifest.cases),
        "classes": manifest.classes,
        "protocol": {
            "bins": args.bins,
            "kernel": args.kernel,
            "include_background": bool(args.include_background),
            "missing_policy": args.missing,
        },
        "macro": macro.to_dict(),
        "micro": micro.to_dict(),
        "per_image": [
            {"case_id": entry.case_id, **report.to_dict()}
            for entry, report in zip(manifest.cases, reports)
        ],
    }
    if manifest.hec:
        payload["hierarchical"] = _hec_metrics(manifest, config, args)
    out = _out_dir(args)
    _write_json(out / "metrics.json", payload)
    text = format_report_text(macro, micro, manifest.classes)
    if manifest.hec:
        hec = payload["hierarchical"]
        text += "\nhierarchical composites\n" + _align(
            [["scope", "class", "ACE", "ECE", "MCE"]]
            + [
                ["macro", g, _fmt(a), _fmt(e), _fmt(m)]
                for g, a, e, m in zip(
                    hec["groups"],
                    hec["macro"]["per_class"]["ace"],
                    hec["macro"]["per_class"]["ece"],
                    hec["macro"]["per_class"]["mce"],
                )
            ]
        )
    (out / "metrics.txt").write_text(text, encoding="utf-8")
    print(f"wrote {out / 'metrics.json'} and {out / 'metrics.txt'}")
    return 0


# --------------------------------------------------------------------------
# diagram / histogram


def _selected_classes(args, manifest) -> list[int]:
    if args.classes:
        try:
            picked = [int(tok) for tok in args.classes.split(",")]
        except ValueError as exc:
            raise CliError(f"bad --classes value: {exc}") from None
        for k in picked:
            if not 0 <= k < manifest.num_classes:
                raise CliError(
                    f"class index {k} out of range for {manifest.num_classes} classes"
                )
        return picked
    mask = evaluated_classes(
        np.ones(manifest.num_classes, dtype=bool), _include_background(args)
    )
    return [k for k in range(manifest.num_classes) if mask[k]]


def cmd_diagram(args) -> int:
    manifest = load_manifest(args.manifest)
    config = _binning(args)
    entries = manifest.cases
    if args.case:
        by_id = {entry.case_id: entry for entry in manifest.cases}
        missing = [cid for cid in args.case if cid not in by_id]
        if missing:
            raise CliError(f"case '{missing[0]}' not found in {args.manifest}")
        entries = [by_id[cid] for cid in args.case]
    classes = _selected_classes(args, manifest)
    include_bg = _include_background(args)
    out = _out_dir(args)
    written = []
    for entry in entries:
        probs, labels = _load_case(entry, manifest.num_classes)
        tally = tally_image(probs, labels, config)
        curve = finalize(tally)
        report = calibration_metrics(
            curve, evaluated_classes(tally.present_classes(), include_bg)
        )
        write_curve_csv(out / f"{entry.case_id}_curve.csv", curve, manifest.classes)
        written.append(f"{entry.case_id}_curve.csv")
        for k in classes:
            if curve.n[k].sum() == 0:
                print(f"note: {entry.case_id} class {k} has no mass, skipped")
                continue
            spec = build_diagram(curve, k, report, class_label=manifest.classes[k])
            base = f"{entry.case_id}_class{k}_diagram"
            render_svg(spec, out / f"{base}.svg")
            save_diagram_png(spec, out / f"{base}.png")
            written.append(f"{base}.svg")
    print(f"wrote {len(written)} artifact(s) to {out}")
    return 0


def cmd_histogram(args) -> int:
    manifest = load_manifest(args.manifest)
    config = _binning(args)
    classes = _selected_classes(args, manifest)

    def work(entry):
        probs, labels = _load_case(entry, manifest.num_classes)
        return finalize(tally_image(probs, labels, config))

    curves = _case_map(work, manifest.cases, args.jobs)
    out = _out_dir(args)
    histograms = []
    for k in classes:
        name = manifest.classes[k]
        try:
            hist = build_dataset_histogram(
                curves, k, rows=args.rows, gamma=args.gamma, class_label=name
            )
        except ValueError as exc:
            print(f"note: class {k} skipped ({exc})")
            continue
        histograms.append(hist)
        render_svg(hist, out / f"histogram_{name}.svg")
        save_histogram_png(hist, out / f"histogram_{name}.png")
    if not histograms:
        raise CliError("no class produced a histogram (no foreground anywhere?)")
    write_histogram_csv(out / "histogram.csv", histograms)
    print(f"wrote {len(histograms)} histogram(s) and {out / 'histogram.csv'}")
    return 0


# --------------------------------------------------------------------------
# temperature scaling


def cmd_temp_scale(args) -> int:
    manifest = load_manifest(args.manifest)
    c = manifest.num_classes
    stream = []
    for entry in manifest.cases:
        if entry.logits is None:
            raise CliError(
                f"case '{entry.case_id}' has no logits; temperature scaling "
                "optimizes the pre-softmax outputs"
            )
        logits = read_volume(entry.logits).astype(np.float64)
        labels = load_case_label(entry, c)
        stream.append((logits.reshape(c, -1), np.asarray(labels).ravel()))

    result = fit_temperature(
        stream,
        epochs=args.epochs,
        lr=args.lr,
        init_temperature=args.init_temperature,
    )
    config = _binning(args)
    include_bg = _include_background(args)

    def reports_at(temperature: float):
        reports = []
        for logits, labels in stream:
            probs = apply_temperature(logits, temperature)
            tally = tally_image(probs, labels, config)
            reports.append(
                calibration_metrics(
                    finalize(tally),
                    evaluated_classes(tally.present_classes(), include_bg),
                )
            )
        return macro_report(reports, missing_policy=args.missing)

    before = reports_at(1.0)
    after = reports_at(result.temperature)
    payload = {
        "manifest": str(args.manifest),
        "fit": result.to_dict(),
        "macro_before": before.to_dict(),
        "macro_after": after.to_dict(),
        "protocol": {"bins": args.bins, "kernel": args.kernel},
    }
    out = _out_dir(args)
    _write_json(out / "temperature.json", payload)
    rows = [
        ["", "CE", "macro ACE"],
        ["T = 1", _fmt(result.ce_initial), _pm(before.mean_ace, before.std_ace)],
        [
            f"T = {result.temperature:.4f}",
            _fmt(result.ce_final),
            _pm(after.mean_ace, after.std_ace),
        ],
    ]
    (out / "temperature.txt").write_text(_align(rows), encoding="utf-8")
    print(
        f"fitted T = {result.temperature:.6f} "
        f"(CE {result.ce_initial:.6f} -> {result.ce_final:.6f}); "
        f"wrote {out / 'temperature.json'}"
    )
    return 0


# --------------------------------------------------------------------------
# gradient check


def _kink_free_probs(rng, num_voxels: int, num_classes: int, config: BinningConfig,
                     margin: float) -> np.ndarray:
    """Random softmax-normalized probabilities whose components stay at
    least `margin` away from every non-differentiable point of the kernel."""
    m = config.num_bins
    if config.kernel is Kernel.HARD:
        knots = np.arange(m + 1) / m
    else:
        centres = (np.arange(m) + 0.5) / m
        knots = np.concatenate(([0.0, 1.0], centres))
    for _ in range(500):
        probs = rng.dirichlet(np.ones(num_classes), size=num_voxels).T
        dist = np.abs(probs[..., None] - knots).min(axis=-1)
        if dist.min() > margin:
            return probs
    raise CliError("could not sample a kink-free instance; lower --margin")


def _max_rel_error(config: BinningConfig, instances: int, seed: int,
                   h: float, margin: float) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        c = int(rng.integers(2, 4))
        n = int(rng.integers(16, 48))
        probs = _kink_free_probs(rng, n, c, config, margin)
        labels = rng.integers(0, c, size=n)
        _, grad = ace_loss(probs, labels, config, include_background=True)
        flat = probs.ravel()
        g_flat = grad.ravel()
        for idx in rng.choice(flat.size, size=min(8, flat.size), replace=False):
            probe = flat.copy()
            probe[idx] += h
            up, _ = ace_loss(probe.reshape(probs.shape), labels, config,
                             include_background=True, marginal=True)
            probe[idx] -= 2 * h
            down, _ = ace_loss(probe.reshape(probs.shape), labels, config,
                               include_background=True, marginal=True)
            fd = (up - down) / (2 * h)
            scale = max(abs(fd), abs(g_flat[idx]), 1e-8)
            worst = max(worst, abs(fd - g_flat[idx]) / scale)
    return worst


def cmd_grad_check(args) -> int:
    results = {}
    for kernel in ("hard", "soft"):
        config = BinningConfig(num_bins=args.bins, kernel=Kernel(kernel))
        results[kernel] = _max_rel_error(
            config, args.instances, args.seed, args.step, args.margin
        )
    passed = all(v <= args.tolerance for v in results.values())
    payload = {
        "bins": args.bins,
        "instances": args.instances,
        "step": args.step,
        "margin": args.margin,
        "tolerance": args.tolerance,
        "max_rel_error": {k: float(v) for k, v in results.items()},
        "passed": passed,
    }
    out = _out_dir(args)
    _write_json(out / "grad_check.json", payload)
    for kernel, err in results.items():
        print(f"{kernel}: max relative error {err:.3e} (tolerance {args.tolerance:g})")
    if not passed:
        raise CliError("gradient check failed; see grad_check.json")
    return 0


# --------------------------------------------------------------------------
# harness commands


def _toy_configs(args):
    data = replication_data_config(
        seed=args.seed,
        **({"label_noise": args.label_noise} if args.label_noise is not None else {}),
        **({"size": args.size} if args.size else {}),
    )
    train_cfg = replication_train_config(
        variant=args.variant,
        seed=args.seed,
        lam=args.lam,
        num_bins=args.bins,
        epochs=args.epochs,
        lr=args.lr,
        hidden=args.hidden,
    )
    return data, train_cfg


def cmd_train_toy(args) -> int:
    data_cfg, train_cfg = _toy_configs(args)
    dataset = make_dataset(data_cfg)
    result = train(dataset, train_cfg)
    out = _out_dir(args)

    eval_dir = out / f"eval_{args.variant}"
    eval_dir.mkdir(exist_ok=True)
    entries = []
    for case in dataset.test:
        logits = result.model.predict_logits(case.image)
        probs = softmax(logits.reshape(logits.shape[0], -1), axis=0).reshape(logits.shape)
        stem = case.case_id
        write_volume(eval_dir / f"{stem}_label.calv", case.label)
        write_volume(eval_dir / f"{stem}_logits.calv", logits)
        write_volume(eval_dir / f"{stem}_pred.calv", probs)
        entries.append({
            "case_id": stem,
            "label": f"{stem}_label.calv",
            "logits": f"{stem}_logits.calv",
            "prediction": f"{stem}_pred.calv",
        })
    manifest_path = eval_dir / "manifest.json"
    write_manifest(
        manifest_path, cases=entries, classes=data_cfg.class_names, split="test"
    )

    payload = {
        "variant": args.variant,
        "train_config": {
            "lam": train_cfg.lam,
            "num_bins": train_cfg.num_bins,
            "hidden": train_cfg.hidden,
            "epochs": train_cfg.epochs,
            "lr": train_cfg.lr,
            "seed": train_cfg.seed,
        },
        "data_config": {
            "size": data_cfg.size,
            "num_classes": data_cfg.num_classes,
            "label_noise": data_cfg.label_noise,
            "seed": data_cfg.seed,
        },
        "best_epoch": result.best_epoch,
        "best_val_dsc": result.best_val_dsc,
        "test_dsc": result.test_dsc,
        "boundary_confidence": result.boundary_confidence,
        "macro": result.macro.to_dict(),
        "micro": result.micro.to_dict(),
        "eval_manifest": str(manifest_path),
    }
    _write_json(out / f"train_{args.variant}.json", payload)
    rows = [
        ["variant", "DSC", "macro ACE", "micro ACE", "boundary conf"],
        [
            args.variant,
            _fmt(result.test_dsc),
            _pm(result.macro.mean_ace, result.macro.std_ace),
            _fmt(result.micro.mean_ace),
            _fmt(result.boundary_confidence),
        ],
    ]
    (out / f"train_{args.variant}.txt").write_text(_align(rows), encoding="utf-8")
    print(
        f"{args.variant}: test DSC {result.test_dsc:.4f}, "
        f"macro ACE {result.macro.mean_ace:.4f}; eval manifest {manifest_path}"
    )
    return 0


def cmd_sweep(args) -> int:
    try:
        values = [float(tok) for tok in args.values.split(",")]
        seeds = tuple(int(tok) for tok in args.seeds.split(","))
    except ValueError as exc:
        raise CliError(f"bad numeric list: {exc}") from None
    variants = tuple(args.variants.split(","))
    for v in variants:
        if v not in VARIANTS:
            raise CliError(f"unknown variant '{v}', expected one of {VARIANTS}")
    data_cfg, base_cfg = _toy_configs(args)
    result = run_sweep(
        data_cfg, args.dimension, values,
        variants=variants, seeds=seeds, base=base_cfg,
    )
    out = _out_dir(args)
    write_sweep_csv(out / "sweep.csv", result)
    for variant in variants:
        dsc_by_value: dict[float, list[float]] = {v: [] for v in values}
        ace_by_value: dict[float, list[float]] = {v: [] for v in values}
        for cell in result.cells:
            if cell.variant == variant:
                dsc_by_value[cell.value].append(cell.dsc)
                ace_by_value[cell.value].append(cell.macro_ace)
        save_sweep_png(
            args.dimension, values, dsc_by_value, ace_by_value,
            out / f"sweep_{variant}.png",
        )
    print(f"wrote {out / 'sweep.csv'} ({len(result.cells)} runs)")
    return 0


def cmd_synth(args) -> int:
    if args.preset == "separable":
        cfg = replication_data_config(
            seed=args.seed, label_noise=0.0, intensity_noise=0.08
        )
    else:
        cfg = replication_data_config(seed=args.seed)
    out = _out_dir(args)
    manifests = generate_dataset(cfg, out)
    for split in ("train", "val", "test"):
        print(f"{split}: {manifests[split]}")
    return 0


# --------------------------------------------------------------------------
# binding hook


def cmd_ace_loss(args) -> int:
    probs = read_volume(args.probs).astype(np.float64)
    labels = read_volume(args.labels)
    config = _binning(args)
    if args.lam == 0.0:
        value, grad = 0.0, np.zeros_like(probs)
    else:
        value, grad = ace_loss(
            probs, labels, config,
            include_background=_include_background(args),
            marginal=args.marginal,
        )
        value *= args.lam
        grad = grad * args.lam
    if args.grad_out:
        write_volume(args.grad_out, grad, double=True)
    payload = {
        "value": value,
        "bins": args.bins,
        "kernel": args.kernel,
        "lam": args.lam,
        "grad": str(args.grad_out) if args.grad_out else None,
    }
    print(json.dumps(payload, sort_keys=True))
    return 0


# --------------------------------------------------------------------------
# parser


def _add_protocol_options(sub, kernel_default: str = "hard") -> None:
    sub.add_argument("--bins", type=int, default=20, help="number of confidence bins")
    sub.add_argument(
        "--kernel", choices=("hard", "soft"), default=kernel_default,
        help="bin membership kernel",
    )
    sub.add_argument(
        "--include-background", action="store_true",
        help="evaluate channel 0 too (excluded by default for multi-class)",
    )


def _add_common_options(sub) -> None:
    sub.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")


def _add_manifest_options(sub) -> None:
    sub.add_argument("--manifest", required=True, help="dataset manifest JSON")
    sub.add_argument(
        "--missing", choices=("skip", "include"), default="skip",
        help="macro averaging policy for classes absent from an image",
    )
    sub.add_argument("--jobs", type=int, default=1, help="parallel case workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segcalib",
        description="Calibration metrics, losses and figures for dense segmentation.",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("metrics", help="macro/micro calibration reports")
    _add_manifest_options(p)
    _add_protocol_options(p)
    _add_common_options(p)
    p.set_defaults(func=cmd_metrics)

    p = subs.add_parser("diagram", help="per-case reliability diagrams")
    _add_manifest_options(p)
    _add_protocol_options(p)
    _add_common_options(p)
    p.add_argument("--case", action="append", help="case id (repeatable; default all)")
    p.add_argument("--classes", default=None, help="comma-separated class indices")
    p.set_defaults(func=cmd_diagram)

    p = subs.add_parser("histogram", help="dataset reliability histogram")
    _add_manifest_options(p)
    _add_protocol_options(p)
    _add_common_options(p)
    p.add_argument("--classes", default=None, help="comma-separated class indices")
    p.add_argument("--rows", type=int, default=DEFAULT_ROWS,
                   help="observed-frequency rows")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA,
                   help="display gamma correction")
    p.set_defaults(func=cmd_histogram)

    p = subs.add_parser("temp-scale", help="fit scalar temperature on logits")
    _add_manifest_options(p)
    _add_protocol_options(p)
    _add_common_options(p)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--init-temperature", type=float, default=1.0)
    p.set_defaults(func=cmd_temp_scale)

    p = subs.add_parser("grad-check", help="finite-difference gradient verification")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--step", type=float, default=1e-6, help="finite-difference step")
    p.add_argument("--margin", type=float, default=1e-4,
                   help="minimum probe distance from kernel kinks")
    p.add_argument("--tolerance", type=float, default=1e-5)
    _add_common_options(p)
    p.set_defaults(func=cmd_grad_check)

    for name in ("train-toy", "sweep"):
        p = subs.add_parser(
            name,
            help="train synthetic variants" if name == "train-toy"
            else "bin-count / loss-weight sensitivity sweep",
        )
        p.add_argument("--variant", choices=VARIANTS, default="sl1")
        p.add_argument("--lam", type=float, default=1.0)
        p.add_argument("--bins", type=int, default=20)
        p.add_argument("--epochs", type=int, default=800)
        p.add_argument("--lr", type=float, default=5.0)
        p.add_argument("--hidden", type=int, default=16)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--size", type=int, default=None)
        p.add_argument("--label-noise", type=float, default=None)
        _add_common_options(p)
        if name == "train-toy":
            p.set_defaults(func=cmd_train_toy)
        else:
            p.add_argument("--dimension", choices=("bins", "lambda"), required=True)
            p.add_argument("--values", required=True,
                           help="comma-separated sweep values")
            p.add_argument("--variants", default="hl1,sl1")
            p.add_argument("--seeds", default="0,1,2")
            p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("synth", help="materialize a synthetic dataset")
    p.add_argument("--preset", choices=("replication", "separable"),
                   default="replication")
    p.add_argument("--seed", type=int, default=0)
    _add_common_options(p)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("ace-loss", help="loss value + gradient for one volume pair")
    p.add_argument("--probs", required=True, help="probability volume (CALV1)")
    p.add_argument("--labels", required=True, help="label volume (CALV1)")
    _add_protocol_options(p, kernel_default="soft")
    p.add_argument("--lam", type=float, default=1.0, help="loss weight")
    p.add_argument("--marginal", action="store_true",
                   help="channels are independent marginals, skip softmax check")
    p.add_argument("--grad-out", default=None,
                   help="write the gradient volume here (float64)")
    p.set_defaults(func=cmd_ace_loss)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
