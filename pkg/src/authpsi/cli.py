"""Operator entry points: dataset generation, commitment, runs, benchmarks.

Exit codes: 0 success, 2 usage/configuration error, 3 protocol abort
(integrity violation detected), 4 transport failure.

A networked run needs one process per party plus a dealer process (role 0),
all pointed at the same JSON config:

    {
      "session_id": "<32 hex chars>",
      "salted": true,
      "n": 3, "t": 1,
      "dealer": {"address": "127.0.0.1:9000"},
      "parties": {
        "1": {"address": "127.0.0.1:9001", "dataset": "p1.dat",
              "root": "p1.root", "role": "receiver"},
        ...
      }
    }

`--local` instead runs every party of the session inside one process over the
in-process bus.
"""

from __future__ import annotations

import json
import statistics
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import datasets, harness, merkle, psi2, psin, transport, vole
from .errors import ConfigError, TransportError

EXIT_ABORT = 3
EXIT_TRANSPORT = 4

# published communication figures of the underlying two-party protocol family
# (volePSI with the Silver encoder), kept for side-by-side context only: this
# artifact ships full per-element proofs and a wider value field, so its
# bits/element are expected to sit well above these.
REFERENCE_BITS_PER_ELEMENT = {1024: 462, 4096: 437, 16384: 455, 65536: 467}

# published end-to-end timings for the commitment-gated multi-party protocol
# family, (n, t) -> {n_l: ms}; different hardware and backends, context only.
REFERENCE_MULTI_MS = {
    (3, 1): {256: 117.13, 1024: 165.13, 4096: 791.61},
    (4, 1): {256: 118.21, 1024: 186.54, 4096: 795.47},
    (4, 2): {256: 183.77, 1024: 241.25, 4096: 910.91},
    (5, 1): {256: 116.45, 1024: 188.76, 4096: 817.34},
    (5, 3): {256: 202.76, 1024: 261.90, 4096: 907.18},
    (8, 1): {256: 134.21, 1024: 183.03, 4096: 818.51},
    (8, 4): {256: 205.76, 1024: 274.56, 4096: 935.47},
}

MULTI_GRID = [(3, 1), (4, 1), (4, 2), (5, 1), (5, 3), (8, 1), (8, 4)]


@click.group()
def main():
    """Authenticated private set intersection over committed inputs."""


@main.command()
@click.option("--count", type=int, required=True, help="elements per party")
@click.option("--elem-bytes", type=int, default=16, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--parties", type=int, default=2, show_default=True)
@click.option("--overlap", type=int, default=0, show_default=True,
              help="size of the planted common core")
@click.option("--out-prefix", default="party", show_default=True)
def gen(count, elem_bytes, seed, parties, overlap, out_prefix):
    """Write per-party datasets with a planted common core."""
    if count < 1:
        raise click.UsageError("--count must be at least 1")
    if not 0 <= overlap <= count:
        raise click.UsageError("--overlap must lie between 0 and --count")
    sets = datasets.generate_sets(count, elem_bytes, parties, overlap, seed)
    core = sorted(set(sets[0]).intersection(*map(set, sets[1:]))) if parties > 1 else sorted(sets[0])
    for i, s in enumerate(sets, start=1):
        path = f"{out_prefix}{i}.dat"
        datasets.write_dataset(path, s)
        click.echo(f"wrote {path} ({count} elements)")
    core_path = f"{out_prefix}_core.dat"
    datasets.write_dataset(core_path, core)
    click.echo(f"wrote {core_path} ({len(core)} planted common elements)")


@main.command()
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--salt", default="", help="hex leaf salt (the session id); empty = unsalted")
@click.option("--out", "out_path", required=True)
def commit(in_path, salt, out_path):
    """Commit to a dataset: write its tree root."""
    try:
        elements = datasets.read_dataset(in_path)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    if not elements:
        raise click.UsageError("cannot commit to an empty dataset")
    try:
        salt_bytes = bytes.fromhex(salt)
    except ValueError:
        raise click.UsageError("--salt must be hex")
    root = merkle.root(elements, salt_bytes)
    Path(out_path).write_bytes(root.to_bytes())
    click.echo(root.to_bytes().hex())


def _load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read config: {exc}")
    for key in ("session_id", "parties"):
        if key not in cfg:
            raise click.UsageError(f"config is missing {key!r}")
    return cfg


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host, int(port)


def _config_party(cfg: dict, i: int) -> dict:
    entry = cfg["parties"].get(str(i))
    if entry is None:
        raise click.UsageError(f"config has no party {i}")
    return entry


def _load_inputs(cfg: dict) -> tuple[dict, dict]:
    """Datasets and announced roots for every configured party."""
    sets, roots = {}, {}
    for key, entry in cfg["parties"].items():
        i = int(key)
        try:
            sets[i] = datasets.read_dataset(entry["dataset"])
            roots[i] = merkle.MerkleRoot.from_bytes(Path(entry["root"]).read_bytes())
        except (OSError, ValueError, KeyError) as exc:
            raise click.UsageError(f"party {i}: {exc}")
    return sets, roots


def _write_outputs(out_dir, intersection, report) -> None:
    out = Path(out_dir) if out_dir else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    if intersection is not None:
        lines = sorted(e.hex() for e in intersection)
        (out / "intersection.txt").write_text("\n".join(lines) + ("\n" if lines else ""))
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")


@main.command(name="run")
@click.option("--construction", type=click.Choice(["2pc", "npc"]), required=True)
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--role", type=int, default=None,
              help="party index this process runs (0 = dealer); omit with --local")
@click.option("--local", is_flag=True, help="run all parties in-process")
@click.option("--tamper", default=None,
              help="adversarial move: flip-element:I | flip-path:I | swap-proofs:I,J | extra-element")
@click.option("--tamper-party", type=int, default=None,
              help="which party misbehaves (defaults to --role in networked mode)")
@click.option("--seed", type=int, default=None,
              help="fix all protocol randomness (local mode) for reproducible runs")
@click.option("--out-dir", default=None)
def run_cmd(construction, config_path, role, local, tamper, tamper_party, seed, out_dir):
    """Execute one protocol session."""
    cfg = _load_config(config_path)
    try:
        session = bytes.fromhex(cfg["session_id"])
    except ValueError:
        raise click.UsageError("session_id must be hex")
    salted = bool(cfg.get("salted", True))

    if local:
        _run_local(construction, cfg, session, salted, tamper, tamper_party, seed, out_dir)
    else:
        if role is None:
            raise click.UsageError("networked mode needs --role (0 for the dealer)")
        _run_networked(construction, cfg, session, salted, role, tamper, tamper_party, out_dir)


def _run_local(construction, cfg, session, salted, tamper, tamper_party, seed, out_dir):
    sets, roots = _load_inputs(cfg)
    tamper_obj = None
    if tamper:
        if tamper_party is None:
            raise click.UsageError("--tamper in local mode needs --tamper-party")
        try:
            tamper_obj = harness.Tamper.parse(tamper, tamper_party)
        except ValueError as exc:
            raise click.UsageError(str(exc))
    try:
        if construction == "2pc":
            if sorted(sets) != [1, 2]:
                raise click.UsageError("2pc config must define parties 1 and 2")
            result = harness.run_two_party(sets[1], sets[2], session_id=session, salted=salted,
                                           tamper=tamper_obj, seed=seed, announced_roots=roots)
        else:
            n = int(cfg.get("n", len(sets)))
            t = int(cfg["t"])
            if sorted(sets) != list(range(1, n + 1)):
                raise click.UsageError("npc config must define parties 1..n")
            result = harness.run_multi_party([sets[i] for i in range(1, n + 1)], t,
                                             session_id=session, salted=salted,
                                             tamper=tamper_obj, seed=seed, announced_roots=roots)
    except ConfigError as exc:
        raise click.UsageError(str(exc))
    _write_outputs(out_dir, result.intersection, result.report)
    if result.aborted:
        click.echo("session aborted: integrity verification failed", err=True)
        sys.exit(EXIT_ABORT)
    click.echo(f"ok: {len(result.intersection or ())} common elements, "
               f"{result.report['bits_per_element']:.0f} bits/element")


def _run_networked(construction, cfg, session, salted, role, tamper, tamper_party, out_dir):
    dealer_addr = _parse_addr(cfg["dealer"]["address"]) if "dealer" in cfg else None
    addresses = {int(k): _parse_addr(v["address"]) for k, v in cfg["parties"].items()}
    if dealer_addr is not None:
        addresses[transport.DEALER_INDEX] = dealer_addr

    if role == transport.DEALER_INDEX:
        node = transport.TcpNode(role, dealer_addr, addresses)
        try:
            served = harness.serve_dealer(node)
        finally:
            node.close()
        click.echo(f"dealer served {served} responses")
        return

    sets, roots = _load_inputs(cfg)
    my = _config_party(cfg, role)
    inputs = sets[role]

    tamper_obj = None
    if tamper:
        try:
            tamper_obj = harness.Tamper.parse(tamper, tamper_party if tamper_party is not None else role)
        except ValueError as exc:
            raise click.UsageError(str(exc))
        if tamper_obj.party != role:
            raise click.UsageError("a networked process can only tamper with its own inputs")
        if tamper_obj.kind in ("flip-element", "extra-element"):
            inputs = harness._tampered_inputs(inputs, tamper_obj)

    try:
        engine = _build_engine(construction, cfg, role, my, inputs, roots, session, salted,
                               skip_self_check=tamper_obj is not None)
    except ConfigError as exc:
        raise click.UsageError(str(exc))

    def mutate(env):
        if (tamper_obj and tamper_obj.kind in ("flip-path", "swap-proofs")
                and env.msg_type in (psi2.MSG_ROOT_PROOFS, psin.MSG_ROOT_PROOFS)):
            return transport.Envelope(env.session_id, env.msg_type,
                                      harness._mutate_proof_payload(env.payload, tamper_obj))
        return env

    node = transport.TcpNode(role, addresses[role], addresses)
    t0 = time.perf_counter()
    try:
        harness.drive_engine(engine, node, mutate_outbound=mutate if tamper_obj else None)
    except TransportError as exc:
        click.echo(f"transport failure: {exc}", err=True)
        sys.exit(EXIT_TRANSPORT)
    finally:
        node.close()
    elapsed = (time.perf_counter() - t0) * 1000

    n_l = len(sets[role])
    report = transport.make_report(node.meter, session_id=session, n=n_l,
                                   parties=len(cfg["parties"]),
                                   t=cfg.get("t"), phase_ms=engine.phase_ms,
                                   aborted=engine.aborted)
    report["elapsed_ms"] = elapsed
    _write_outputs(out_dir, engine.intersection, report)
    if engine.aborted:
        click.echo("session aborted: integrity verification failed", err=True)
        sys.exit(EXIT_ABORT)
    if engine.intersection is not None:
        click.echo(f"ok: {len(engine.intersection)} common elements")
    else:
        click.echo("ok: finished (no output at this party)")


def _build_engine(construction, cfg, role, my, inputs, roots, session, salted, skip_self_check):
    if construction == "2pc":
        peer = 2 if role == 1 else 1
        role_name = my.get("role") or (psi2.RECEIVER if role == 1 else psi2.SENDER)
        config = psi2.PartyConfig2(role=role_name, party_index=role, peer_index=peer,
                                   input_set=inputs, session_id=session,
                                   announced_root=roots[role], peer_root=roots[peer],
                                   salted=salted, skip_self_check=skip_self_check)
        return psi2.Psi2Engine(config)
    n = int(cfg.get("n", len(cfg["parties"])))
    t = int(cfg["t"])
    config = psin.PartyConfigN(n=n, t=t, party_index=role, input_set=inputs,
                               session_id=session, roots=roots, salted=salted,
                               skip_self_check=skip_self_check)
    return psin.PsinEngine(config)


@main.command()
@click.option("--sizes", default="1024,4096,16384", show_default=True,
              help="comma-separated per-party set sizes")
@click.option("--reps", type=int, default=3, show_default=True)
@click.option("--construction", type=click.Choice(["2pc", "npc", "both"]),
              default="2pc", show_default=True)
@click.option("--out", "out_path", default=None, help=".json or .csv output path")
@click.option("--seed", type=int, default=1, show_default=True)
def bench(sizes, reps, construction, out_path, seed):
    """Honest-run sweeps: median timings and communication per element."""
    if reps < 1:
        raise click.UsageError("--reps must be at least 1")
    try:
        size_list = [int(s) for s in sizes.split(",") if s.strip()]
    except ValueError:
        raise click.UsageError("--sizes must be comma-separated integers")

    result = {"aggregated": reps > 1, "reps": reps}
    if construction in ("2pc", "both"):
        rows = []
        for n in size_list:
            times, bpe = [], None
            for r in range(reps):
                x, y = datasets.generate_sets(n, 16, 2, n // 4, seed + 31 * r)
                run = harness.run_two_party(x, y, seed=seed + 97 * r)
                if run.aborted:
                    raise click.ClickException(f"honest run aborted at n={n}")
                times.append(run.elapsed_ms)
                bpe = run.report["bits_per_element"]
            rows.append({
                "n": n,
                "median_ms": round(statistics.median(times), 2),
                "bits_per_element": round(bpe, 1),
                "reference_bits_per_element": REFERENCE_BITS_PER_ELEMENT.get(n),
            })
            click.echo(f"2pc n={n}: {rows[-1]['median_ms']} ms, "
                       f"{rows[-1]['bits_per_element']} bits/element")
        result["two_party"] = rows

    if construction in ("npc", "both"):
        rows = []
        for n, t in MULTI_GRID:
            for n_l in size_list:
                times = []
                for r in range(reps):
                    party_sets = datasets.generate_sets(n_l, 16, n, n_l // 4, seed + 13 * r)
                    run = harness.run_multi_party(party_sets, t, seed=seed + 51 * r)
                    if run.aborted:
                        raise click.ClickException(f"honest run aborted at (n={n}, t={t})")
                    times.append(run.elapsed_ms)
                rows.append({
                    "n": n, "t": t, "n_l": n_l,
                    "median_ms": round(statistics.median(times), 2),
                    "reference_ms": REFERENCE_MULTI_MS.get((n, t), {}).get(n_l),
                })
                click.echo(f"npc (n={n}, t={t}) n_l={n_l}: {rows[-1]['median_ms']} ms")
        result["multi_party"] = rows

    if out_path:
        if out_path.endswith(".csv"):
            _write_bench_csv(out_path, result)
        else:
            Path(out_path).write_text(json.dumps(result, indent=2) + "\n")
        click.echo(f"wrote {out_path}")


def _write_bench_csv(path, result):
    lines = []
    if "two_party" in result:
        lines.append("construction,n,median_ms,bits_per_element,reference_bits_per_element")
        for row in result["two_party"]:
            lines.append(f"2pc,{row['n']},{row['median_ms']},{row['bits_per_element']},"
                         f"{row['reference_bits_per_element'] or ''}")
    if "multi_party" in result:
        lines.append("construction,n,t,n_l,median_ms,reference_ms")
        for row in result["multi_party"]:
            lines.append(f"npc,{row['n']},{row['t']},{row['n_l']},{row['median_ms']},"
                         f"{row['reference_ms'] or ''}")
    Path(path).write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
