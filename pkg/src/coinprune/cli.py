"""Operator entry point.

Subcommands:
  chain gen        generate a seeded synthetic chain into a block file
  snapshot create  replay a block file and snapshot the UTXO set
  snapshot verify  check a snapshot file against an expected id
  snapshot id      print the layered id of a snapshot file
  sim bootstrap    run a network scenario file and write its reports
  sim security     run the Monte Carlo sweep, write CSVs and SVG charts
  report           redraw SVG charts from previously written CSVs

Exit status is 0 on success, 1 on any verification failure, and 2 on
usage errors (argparse's own convention). Output lands in --out-dir,
falling back to $COINPRUNE_OUT, falling back to the working directory.
Every run is reproducible from its flags: reports embed the seed.
"""

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from pathlib import Path

from .chain import (ChainError, ChainParams, HeaderIndex, UtxoSet,
                    header_record, read_block_file, validate_and_apply_block,
                    work_from_bits, write_block_file)
from .chaingen import light_profile, generate_chain
from .netsim import SimError, format_scenario, parse_scenario, run_simulation
from .security import SweepConfig, percent_grid, sweep
from .snapshot import (SnapshotError, build_snapshot, chunk_hashes,
                       read_snapshot_file, verify_snapshot, wire_size,
                       write_snapshot_file)

OUT_DIR_ENV = "COINPRUNE_OUT"

OK = 0
VERIFY_FAILED = 1
USAGE = 2


def _out_dir(args) -> Path:
    path = Path(args.out_dir or os.environ.get(OUT_DIR_ENV, "."))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return VERIFY_FAILED


# --- SVG line charts --------------------------------------------------------
# Self-contained generation: CSV is the primary artifact, the SVG is a
# convenience view, so a plotting dependency is not warranted.

_PALETTE = ("#1b6ca8", "#c0392b", "#27ae60", "#8e44ad", "#d35400", "#16a085")
_MARGIN = (70, 20, 40, 50)  # left, right, top, bottom


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + i * (hi - lo) / (n - 1) for i in range(n)]


def svg_line_chart(title: str, x_label: str, y_label: str,
                   series: list[tuple[str, list[tuple[float, float]]]],
                   width: int = 720, height: int = 440,
                   meta: str = "") -> str:
    left, right, top, bottom = _MARGIN
    plot_w = width - left - right
    plot_h = height - top - bottom
    points = [p for _, pts in series for p in pts]
    xs = [x for x, _ in points] or [0.0, 1.0]
    ys = [y for _, y in points] or [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    if x_hi <= x_lo:
        x_hi = x_lo + 1.0
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0

    def px(x: float) -> float:
        return left + (x - x_lo) / (x_hi - x_lo) * plot_w

    def py(y: float) -> float:
        return top + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" '
              f'width="{width}" height="{height}" '
              f'font-family="sans-serif" font-size="12">\n')
    if meta:
        out.write(f"<!-- {meta} -->\n")
    out.write(f'<rect width="{width}" height="{height}" fill="white"/>\n')
    out.write(f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" '
              f'font-size="14">{title}</text>\n')
    for yt in _ticks(y_lo, y_hi):
        y = py(yt)
        out.write(f'<line x1="{left}" y1="{y:.2f}" x2="{left + plot_w}" '
                  f'y2="{y:.2f}" stroke="#dddddd"/>\n')
        out.write(f'<text x="{left - 6}" y="{y + 4:.2f}" '
                  f'text-anchor="end">{yt:g}</text>\n')
    for xt in _ticks(x_lo, x_hi):
        x = px(xt)
        out.write(f'<line x1="{x:.2f}" y1="{top + plot_h}" x2="{x:.2f}" '
                  f'y2="{top + plot_h + 4}" stroke="#333333"/>\n')
        out.write(f'<text x="{x:.2f}" y="{top + plot_h + 18}" '
                  f'text-anchor="middle">{xt:g}</text>\n')
    out.write(f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
              f'fill="none" stroke="#333333"/>\n')
    out.write(f'<text x="{left + plot_w / 2:.2f}" y="{height - 10}" '
              f'text-anchor="middle">{x_label}</text>\n')
    out.write(f'<text x="16" y="{top + plot_h / 2:.2f}" text-anchor="middle" '
              f'transform="rotate(-90 16 {top + plot_h / 2:.2f})">'
              f'{y_label}</text>\n')
    for i, (label, pts) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        if pts:
            coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
            out.write(f'<polyline points="{coords}" fill="none" '
                      f'stroke="{color}" stroke-width="1.5"/>\n')
        ly = top + 14 + 16 * i
        out.write(f'<line x1="{left + 8}" y1="{ly - 4}" x2="{left + 28}" '
                  f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>\n')
        out.write(f'<text x="{left + 34}" y="{ly}">{label}</text>\n')
    out.write("</svg>\n")
    return out.getvalue()


def svg_bar_chart(title: str, y_label: str,
                  bars: list[tuple[str, float]],
                  width: int = 720, height: int = 440,
                  meta: str = "") -> str:
    left, right, top, bottom = _MARGIN
    plot_w = width - left - right
    plot_h = height - top - bottom
    y_hi = max([v for _, v in bars] or [1.0])
    if y_hi <= 0:
        y_hi = 1.0
    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" '
              f'width="{width}" height="{height}" '
              f'font-family="sans-serif" font-size="12">\n')
    if meta:
        out.write(f"<!-- {meta} -->\n")
    out.write(f'<rect width="{width}" height="{height}" fill="white"/>\n')
    out.write(f'<text x="{width / 2:.2f}" y="20" text-anchor="middle" '
              f'font-size="14">{title}</text>\n')
    for yt in _ticks(0.0, y_hi):
        y = top + plot_h - yt / y_hi * plot_h
        out.write(f'<line x1="{left}" y1="{y:.2f}" x2="{left + plot_w}" '
                  f'y2="{y:.2f}" stroke="#dddddd"/>\n')
        out.write(f'<text x="{left - 6}" y="{y + 4:.2f}" '
                  f'text-anchor="end">{yt:g}</text>\n')
    slot = plot_w / max(len(bars), 1)
    bar_w = slot * 0.6
    for i, (label, value) in enumerate(bars):
        x = left + i * slot + (slot - bar_w) / 2
        h = value / y_hi * plot_h
        y = top + plot_h - h
        color = _PALETTE[i % len(_PALETTE)]
        out.write(f'<rect x="{x:.2f}" y="{y:.2f}" width="{bar_w:.2f}" '
                  f'height="{h:.2f}" fill="{color}"/>\n')
        cx = left + i * slot + slot / 2
        out.write(f'<text x="{cx:.2f}" y="{top + plot_h + 16}" '
                  f'text-anchor="middle">{label}</text>\n')
    out.write(f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
              f'fill="none" stroke="#333333"/>\n')
    out.write(f'<text x="16" y="{top + plot_h / 2:.2f}" text-anchor="middle" '
              f'transform="rotate(-90 16 {top + plot_h / 2:.2f})">'
              f'{y_label}</text>\n')
    out.write("</svg>\n")
    return out.getvalue()


# --- chain ------------------------------------------------------------------

def _cmd_chain_gen(args) -> int:
    out_dir = _out_dir(args)
    profile = light_profile(seed=args.seed, txs_per_block=args.txs_per_block)
    blocks = generate_chain(profile, args.blocks)
    out_path = out_dir / args.out
    write_block_file(out_path, blocks)
    written = [str(out_path)]
    if args.headers:
        index = HeaderIndex()
        work = 0
        unit = work_from_bits(ChainParams().bits)
        for height, block in enumerate(blocks):
            work += unit
            index.append(header_record(block, height, work))
        header_path = out_dir / args.headers
        index.write(header_path)
        written.append(str(header_path))
    tip = blocks[-1].block_id()
    print(f"chain: {len(blocks)} blocks (genesis + {len(blocks) - 1}), "
          f"tip {tip.hex()}")
    print(f"seed {args.seed}")
    for path in written:
        print(f"wrote {path} ({os.path.getsize(path)} bytes)")
    return OK


def _replay(blocks, upto: int) -> UtxoSet:
    """Validate and apply blocks 0..upto, returning the UTXO set."""
    params = ChainParams()
    utxo = UtxoSet()
    prev_id = b"\x00" * 32
    for height in range(upto + 1):
        block = blocks[height]
        validate_and_apply_block(utxo, block, height, prev_id, params)
        prev_id = block.block_id()
    return utxo


# --- snapshot ----------------------------------------------------------------

def _hashes_sidecar(snap_path: str) -> Path:
    return Path(str(snap_path) + ".hashes")


def _cmd_snapshot_create(args) -> int:
    out_dir = _out_dir(args)
    try:
        blocks = read_block_file(args.chain)
    except (OSError, ChainError) as exc:
        return _fail(f"cannot read chain: {exc}")
    if not 0 <= args.height < len(blocks):
        return _fail(f"height {args.height} outside chain of {len(blocks)} blocks")
    try:
        utxo = _replay(blocks, args.height)
    except ChainError as exc:
        return _fail(f"chain invalid: {exc}")
    snap = build_snapshot(utxo, args.height, blocks[args.height].block_id(),
                          obfuscate=args.obfuscate)
    out_path = out_dir / args.out
    write_snapshot_file(out_path, snap)
    # sidecar manifest mirrors the per-chunk hash list a booting node
    # would learn from the inventory advert; it lets verify localize
    sidecar = _hashes_sidecar(out_path)
    sidecar.write_text("".join(f"{h.hex()}\n" for h in chunk_hashes(snap)))
    print(f"snapshot id {snap.id.hex()}")
    print(f"height {args.height}, {len(snap.chunks)} chunks, "
          f"{len(utxo)} outputs, {wire_size(snap)} bytes")
    print(f"wrote {out_path}")
    print(f"wrote {sidecar}")
    return OK


def _cmd_snapshot_verify(args) -> int:
    try:
        snap = read_snapshot_file(args.snap)
    except (OSError, SnapshotError) as exc:
        return _fail(f"cannot read snapshot: {exc}")
    try:
        expected = bytes.fromhex(args.id)
    except ValueError:
        print("error: --id must be hex", file=sys.stderr)
        return USAGE
    if len(expected) != 32:
        print("error: --id must be 32 bytes of hex", file=sys.stderr)
        return USAGE
    hashes = None
    sidecar = Path(args.hashes) if args.hashes else _hashes_sidecar(args.snap)
    if sidecar.exists():
        try:
            hashes = [bytes.fromhex(line) for line in
                      sidecar.read_text().split()]
        except ValueError as exc:
            return _fail(f"bad hash manifest {sidecar}: {exc}")
    check = verify_snapshot(snap, expected, hashes)
    if check.ok:
        print(f"snapshot ok: id {expected.hex()}, {len(snap.chunks)} chunks")
        return OK
    return _fail(f"snapshot verification failed: {check.reason}")


def _cmd_snapshot_id(args) -> int:
    try:
        snap = read_snapshot_file(args.snap)
    except (OSError, SnapshotError) as exc:
        return _fail(f"cannot read snapshot: {exc}")
    print(snap.id.hex())
    return OK


# --- simulations --------------------------------------------------------------

def _cmd_sim_bootstrap(args) -> int:
    out_dir = _out_dir(args)
    try:
        scenario = parse_scenario(Path(args.scenario).read_text())
    except (OSError, SimError) as exc:
        return _fail(f"cannot load scenario: {exc}")
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    sim, report = run_simulation(scenario)

    def as_csv(header, rows):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()

    prefix = args.prefix
    files = {
        f"{prefix}_storage.csv": report.to_csv(),
        f"{prefix}_breakdown.csv": report.breakdown_csv(),
        f"{prefix}_pulses.csv": as_csv(
            ("index", "height", "status", "tag", "count"),
            report.pulse_outcomes),
        f"{prefix}_joins.csv": as_csv(
            ("node", "status", "reason", "attempts", "rx_bytes"),
            report.join_outcomes),
    }
    if args.trace:
        files[f"{prefix}_trace.txt"] = "\n".join(sim.trace.lines) + "\n"
    meta = {
        "seed": scenario.seed,
        "chain_length": scenario.chain_length,
        "scenario": format_scenario(scenario).splitlines(),
        "outputs": sorted(files),
    }
    files[f"{prefix}_meta.json"] = json.dumps(meta, indent=2) + "\n"
    for name, text in sorted(files.items()):
        (out_dir / name).write_text(text)
        print(f"wrote {out_dir / name}")

    for index, height, status, tag, count in report.pulse_outcomes:
        line = f"pulse {index} at height {height}: {status}"
        if status == "accepted":
            line += f" (tag {tag[:16]}..., {count} reaffirmations)"
        print(line)
    failed = False
    for node, status, reason, attempts, _ in report.join_outcomes:
        line = f"join {node}: {status} after {attempts} attempt(s)"
        if reason:
            line += f" ({reason})"
        print(line)
        failed = failed or status != "accepted"
    return VERIFY_FAILED if failed else OK


def _threshold_series(rows):
    """Group sweep rows into per-(delta_r, k) threshold and skip curves."""
    curves: dict[tuple[int, int], dict[float, list]] = {}
    for r in rows:
        curves.setdefault((r[2], r[3]), {}).setdefault(r[0], []).append(r)
    thresholds, skips = [], []
    for (delta_r, k), by_fc in sorted(curves.items()):
        label = f"dR={delta_r} k={k}"
        t_pts, s_pts = [], []
        for f_c in sorted(by_fc):
            cells = by_fc[f_c]
            crossing = [c[1] for c in cells if c[5] >= 0.05]
            if crossing:
                t_pts.append((f_c, min(crossing)))
            s_pts.append((f_c, max(c[6] for c in cells)))
        thresholds.append((label, t_pts))
        skips.append((label, s_pts))
    return thresholds, skips


def _cmd_sim_security(args) -> int:
    out_dir = _out_dir(args)
    try:
        config = SweepConfig(
            n_miners=args.n_miners,
            f_c_values=percent_grid(args.step),
            f_a_values=percent_grid(args.step),
            delta_r_values=tuple(args.delta_r),
            k_values=tuple(args.k),
            trials=args.trials,
            seed=args.seed,
            mode=args.mode,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE
    result = sweep(config, jobs=args.jobs)

    prefix = args.prefix
    meta = f"seed={args.seed} trials={args.trials} mode={args.mode}"
    rows = [tuple(r) for r in result.rows]
    thresholds, skips = _threshold_series(rows)
    files = {
        f"{prefix}_sweep.csv": result.to_csv(),
        f"{prefix}_thresholds.csv": result.thresholds_csv(),
        f"{prefix}_thresholds.svg": svg_line_chart(
            "Least adversarial fraction compromising 5% of pulses",
            "miner support f_C", "f_A threshold", thresholds, meta=meta),
        f"{prefix}_skip.svg": svg_line_chart(
            "Worst-case skip probability", "miner support f_C",
            "max p_skipped over f_A", skips, meta=meta),
        f"{prefix}_meta.json": json.dumps({
            "seed": args.seed, "trials": args.trials, "mode": args.mode,
            "n_miners": args.n_miners, "step": args.step,
            "delta_r": list(args.delta_r), "k": list(args.k),
            "jobs": args.jobs,
        }, indent=2) + "\n",
    }
    for name, text in sorted(files.items()):
        (out_dir / name).write_text(text)
        print(f"wrote {out_dir / name}")
    for delta_r in config.delta_r_values:
        for k in config.k_values:
            if 1.0 in config.f_c_values:
                min_fa = result.min_fa_compromise(1.0, delta_r, k)
                shown = "none" if min_fa is None else f"{min_fa:.2f}"
                print(f"delta_r={delta_r} k={k}: "
                      f"min f_A compromising at full support = {shown}")
    return OK


# --- report -------------------------------------------------------------------

def _cmd_report(args) -> int:
    out_dir = _out_dir(args)
    if not args.sweep and not args.storage:
        print("error: nothing to report, pass --sweep and/or --storage",
              file=sys.stderr)
        return USAGE
    prefix = args.prefix
    written = []
    if args.sweep:
        try:
            with open(args.sweep, newline="") as fh:
                reader = csv.DictReader(fh)
                rows = [(float(r["f_C"]), float(r["f_A"]), int(r["delta_r"]),
                         int(r["k"]), float(r["p_correct"]),
                         float(r["p_adversary"]), float(r["p_skipped"]))
                        for r in reader]
        except (OSError, KeyError, TypeError, ValueError) as exc:
            return _fail(f"cannot read sweep csv: {exc}")
        meta = f"source={args.sweep}"
        thresholds, skips = _threshold_series(rows)
        charts = {
            f"{prefix}_thresholds.svg": svg_line_chart(
                "Least adversarial fraction compromising 5% of pulses",
                "miner support f_C", "f_A threshold", thresholds, meta=meta),
            f"{prefix}_skip.svg": svg_line_chart(
                "Worst-case skip probability", "miner support f_C",
                "max p_skipped over f_A", skips, meta=meta),
        }
        for name, text in sorted(charts.items()):
            (out_dir / name).write_text(text)
            written.append(out_dir / name)
    if args.storage:
        try:
            with open(args.storage, newline="") as fh:
                reader = csv.DictReader(fh)
                bars = [(r["node"], float(r["bytes_stored"])) for r in reader]
        except (OSError, KeyError, TypeError, ValueError) as exc:
            return _fail(f"cannot read storage csv: {exc}")
        chart = svg_bar_chart("Per-node storage", "bytes", bars,
                              meta=f"source={args.storage}")
        path = out_dir / f"{prefix}_storage.svg"
        path.write_text(chart)
        written.append(path)
    for path in written:
        print(f"wrote {path}")
    return OK


# --- argument wiring ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coinprune",
        description="snapshot-based block pruning: chains, snapshots, "
                    "simulations, reports")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_out_dir(p):
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (default ${OUT_DIR_ENV} or .)")

    chain_p = sub.add_parser("chain", help="chain generation")
    chain_sub = chain_p.add_subparsers(dest="chain_command", required=True)
    gen = chain_sub.add_parser("gen", help="generate a synthetic chain")
    gen.add_argument("--blocks", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--txs-per-block", type=int, default=8)
    gen.add_argument("--out", default="chain.blk")
    gen.add_argument("--headers", default=None,
                     help="also write a header index file")
    add_out_dir(gen)
    gen.set_defaults(func=_cmd_chain_gen)

    snap_p = sub.add_parser("snapshot", help="snapshot files")
    snap_sub = snap_p.add_subparsers(dest="snapshot_command", required=True)
    create = snap_sub.add_parser("create", help="snapshot a chain prefix")
    create.add_argument("--chain", required=True)
    create.add_argument("--height", type=int, required=True)
    create.add_argument("--obfuscate", action="store_true")
    create.add_argument("--out", default="state.snap")
    add_out_dir(create)
    create.set_defaults(func=_cmd_snapshot_create)
    verify = snap_sub.add_parser("verify", help="verify against an id")
    verify.add_argument("--snap", required=True)
    verify.add_argument("--id", required=True, help="expected id, hex")
    verify.add_argument("--hashes", default=None,
                        help="chunk hash manifest (default <snap>.hashes)")
    verify.set_defaults(func=_cmd_snapshot_verify)
    ident = snap_sub.add_parser("id", help="print a snapshot's layered id")
    ident.add_argument("--snap", required=True)
    ident.set_defaults(func=_cmd_snapshot_id)

    sim_p = sub.add_parser("sim", help="simulations")
    sim_sub = sim_p.add_subparsers(dest="sim_command", required=True)
    boot = sim_sub.add_parser("bootstrap", help="run a network scenario")
    boot.add_argument("--scenario", required=True, help="scenario file")
    boot.add_argument("--seed", type=int, default=None,
                      help="override the scenario seed")
    boot.add_argument("--trace", action="store_true",
                      help="also write the message trace")
    boot.add_argument("--prefix", default="run")
    add_out_dir(boot)
    boot.set_defaults(func=_cmd_sim_bootstrap)
    sec = sim_sub.add_parser("security", help="adversary resilience sweep")
    sec.add_argument("--delta-r", type=int, nargs="+", default=[1000])
    sec.add_argument("--k", type=int, nargs="+", default=[5])
    sec.add_argument("--trials", type=int, default=1000)
    sec.add_argument("--seed", type=int, default=0)
    sec.add_argument("--jobs", type=int, default=1,
                     help="parallel sweep cells; never changes the output")
    sec.add_argument("--mode", choices=("binomial", "blockwise"),
                     default="binomial")
    sec.add_argument("--step", type=int, default=1,
                     help="grid step in percent for both fraction axes")
    sec.add_argument("--n-miners", type=int, default=1000)
    sec.add_argument("--prefix", default="security")
    add_out_dir(sec)
    sec.set_defaults(func=_cmd_sim_security)

    rep = sub.add_parser("report", help="redraw charts from CSVs")
    rep.add_argument("--sweep", default=None, help="sweep rows CSV")
    rep.add_argument("--storage", default=None, help="per-node storage CSV")
    rep.add_argument("--prefix", default="report")
    add_out_dir(rep)
    rep.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
