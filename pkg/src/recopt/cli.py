"""Command line interface: evaluation runs, billing checks and the env server."""

from __future__ import annotations

import csv
import json
import math
import sys

import click
import numpy as np

from . import envserver
from .billing import bill_no_rec, greedy_no_peak, optimal_reallocation
from .domain import MeterMatrix, Tariffs, load_config
from .evaluate import (
    ExperimentPlan,
    evaluate,
    render_summary,
    rollout_trace,
    time_policies,
    write_results,
)
from .exogenous import sample_sequence, scenario_params
from .policies import parse_policy_spec
from .simulator import CostMode


@click.group()
@click.version_option(package_name="rec-opt")
def main():
    """Simulation and optimal control for energy communities."""


def _parse_policies(texts: tuple[str, ...]) -> tuple:
    specs = []
    for text in texts:
        for part in text.split():
            specs.append(parse_policy_spec(part))
    return tuple(specs)


def _parse_seeds(texts: tuple[str, ...]) -> tuple[int, ...]:
    seeds = []
    for text in texts:
        for part in text.replace(",", " ").split():
            seeds.append(int(part))
    return tuple(seeds)


def _fail(error: Exception):
    raise click.ClickException(str(error))


@main.command("eval")
@click.option("--config", "config_id", required=True,
              help="Packaged config name or path to a config json.")
@click.option("--policies", "policy_texts", multiple=True, required=True,
              help="Policy specs, repeatable or space separated "
                   "(rec, self, opt, opt-retail, mpc:K=12,alpha=0.85).")
@click.option("--scenarios", default=1, show_default=True, type=int,
              help="Noise streams per seed.")
@click.option("--seeds", "seed_texts", multiple=True, default=("0",),
              show_default=True, help="Evaluation seeds, comma separated.")
@click.option("--horizon", type=int, default=None,
              help="Steps per rollout (default: full run length).")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Directory for results.csv and summary.json.")
@click.option("--timing", is_flag=True, help="Also time each policy's action calls.")
@click.option("--json", "as_json", is_flag=True, help="Print the summary as json.")
def eval_command(config_id, policy_texts, scenarios, seed_texts, horizon,
                 out_dir, timing, as_json):
    """Estimate discounted returns for policies on shared scenarios."""
    try:
        plan = ExperimentPlan(
            config=config_id,
            policies=_parse_policies(policy_texts),
            scenarios=scenarios,
            seeds=_parse_seeds(seed_texts),
            horizon=horizon,
            out_dir=out_dir,
            timing=timing,
        )
        estimates = evaluate(plan)
        timings = time_policies(plan) if timing else None
    except (ValueError, RuntimeError) as error:
        _fail(error)
    if out_dir is not None:
        write_results(plan, estimates, out_dir, timings)
    if as_json:
        click.echo(render_summary(plan, estimates, timings), nl=False)
        return
    width = max(len(e.policy) for e in estimates)
    for estimate in estimates:
        if estimate.error is not None:
            click.echo(f"{estimate.policy:<{width}}  failed: {estimate.error}")
            continue
        line = (f"{estimate.policy:<{width}}  mean return {estimate.mean_return:.6f}"
                f"  std err {estimate.standard_error:.6f}"
                f"  seeds {len(estimate.per_seed_returns)}")
        if timings is not None:
            line += f"  s/action {timings[estimate.policy]:.6f}"
        click.echo(line)
    if out_dir is not None:
        click.echo(f"results written to {out_dir}")


@main.command("serve-env")
@click.option("--config", "config_id", required=True,
              help="Default config served when a reset names none.")
@click.option("--mode", type=click.Choice(["sparse", "dense"]), default="sparse",
              show_default=True, help="Default reward timing.")
@click.option("--retail", is_flag=True,
              help="Default to retail-only billing (no community exchange).")
@click.option("--port", type=int, default=None,
              help="Serve over TCP on 127.0.0.1 (0 picks a free port); "
                   "default is newline-delimited json over stdio.")
def serve_env_command(config_id, mode, retail, port):
    """Serve simulator episodes over the newline-delimited json protocol."""
    try:
        load_config(config_id)
    except (ValueError, OSError) as error:
        _fail(error)
    defaults = envserver.ServerDefaults(
        config=config_id, mode=CostMode(dense=mode == "dense", retail=retail)
    )
    if port is None:
        envserver.serve_stdio(defaults)
        return
    server = envserver.serve_tcp(defaults, port, announce=lambda line: (
        sys.stdout.write(line), sys.stdout.flush()))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


@main.command("realloc")
@click.option("--meters", "meters_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Json file with tariffs and per-period meter readings.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def realloc_command(meters_path, as_json):
    """Clear one billing period: optimal reallocation, greedy and no-REC bills.

    The file holds buy/sell price arrays, the four community price scalars,
    consumption/production meter matrices (kWh, one row per member), and
    optionally periods_elapsed, tau and include_peaks.
    """
    with open(meters_path) as handle:
        data = json.load(handle)
    try:
        tariffs = Tariffs(
            buy=np.asarray(data["buy"], dtype=float),
            sell=np.asarray(data["sell"], dtype=float),
            offtake_peak=float(data.get("offtake_peak", 0.0)),
            injection_peak=float(data.get("injection_peak", 0.0)),
            rec_buy_fee=float(data.get("rec_buy_fee", 0.0)),
            rec_sell_fee=float(data.get("rec_sell_fee", 0.0)),
        )
        consumption = np.asarray(data["consumption"], dtype=float)
        production = np.asarray(data["production"], dtype=float)
        if "periods_elapsed" in data:
            meters = MeterMatrix(consumption, production,
                                 periods_elapsed=int(data["periods_elapsed"]),
                                 steps_in_billing=0)
        else:
            meters = MeterMatrix.full(consumption, production)
        tau = data.get("tau")
        include_peaks = bool(data.get("include_peaks", True))
        no_rec = bill_no_rec(meters, tariffs)
        optimal = optimal_reallocation(meters, tariffs, tau=tau,
                                       include_peaks=include_peaks)
        greedy = greedy_no_peak(meters, tariffs, tau=tau)
    except (KeyError, ValueError) as error:
        _fail(error)
    if as_json:
        def block(result):
            return {
                "global_bill": result.global_bill,
                "member_bills": [float(v) for v in result.member_bills],
                "offtake_peaks": [float(v) for v in result.offtake_peak],
                "injection_peaks": [float(v) for v in result.injection_peak],
                "alloc_to_member": [[float(v) for v in row]
                                    for row in result.alloc_to_member],
                "alloc_from_member": [[float(v) for v in row]
                                      for row in result.alloc_from_member],
                "objective": result.objective,
                "status": result.status,
                "tau": result.tau,
            }

        payload = {
            "no_rec": {
                "global_bill": float(no_rec.sum()),
                "member_bills": [float(v) for v in no_rec],
            },
            "optimal": block(optimal),
            "greedy": block(greedy),
        }
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
        return
    click.echo(f"no-REC bill      {float(no_rec.sum()):.4f}")
    click.echo(f"optimal bill     {optimal.global_bill:.4f}  ({optimal.status})")
    click.echo(f"greedy rebilled  {greedy.global_bill:.4f}  ({greedy.status})")


@main.command("bench")
@click.option("--config", "config_id", default="rec2", show_default=True)
@click.option("--policies", "policy_texts", multiple=True,
              default=("rec", "self", "mpc:K=4", "mpc:K=12", "opt"),
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def bench_command(config_id, policy_texts, seed, as_json):
    """Time the action computation of each policy along one rollout."""
    try:
        plan = ExperimentPlan(
            config=config_id,
            policies=_parse_policies(policy_texts),
            seeds=(seed,),
            timing=True,
        )
        timings = time_policies(plan)
    except (ValueError, RuntimeError) as error:
        _fail(error)
    if as_json:
        payload = {
            "config": config_id,
            "seconds_per_action": {
                label: None if math.isnan(value) else value
                for label, value in timings.items()
            },
        }
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
        return
    width = max(len(label) for label in timings)
    for label, value in timings.items():
        text = "failed" if math.isnan(value) else f"{value:.6f} s/action"
        click.echo(f"{label:<{width}}  {text}")


@main.command("sample")
@click.option("--config", "config_id", required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps", type=int, default=None,
              help="Rows to write (default: the whole sampled sequence).")
@click.option("--out", "out_path", type=click.Path(), default="-",
              show_default=True, help="CSV file, - for stdout.")
def sample_command(config_id, seed, steps, out_path):
    """Dump one sampled scenario as a profiles-style CSV."""
    try:
        config = load_config(config_id)
        scenario = sample_sequence(config, scenario_params(config, seed))
    except (ValueError, OSError) as error:
        _fail(error)
    count = scenario.step_count if steps is None else steps
    if not 0 < count <= scenario.step_count:
        _fail(ValueError(
            f"steps must lie in [1, {scenario.step_count}], got {steps}"
        ))
    columns = []
    for m in range(config.member_count):
        if config.base_consumption[:, m].any():
            columns.append((f"m{m + 1}:consumption", scenario.consumption[:, m]))
        if config.base_production[:, m].any():
            columns.append((f"m{m + 1}:production", scenario.production[:, m]))
    handle = click.open_file(out_path, "w")
    writer = csv.writer(handle, lineterminator="\n")
    writer.writerow([label for label, _ in columns])
    for t in range(count):
        writer.writerow([f"{values[t]:.4f}" for _, values in columns])
    if out_path != "-":
        handle.close()
        click.echo(f"{count} steps written to {out_path}")


@main.command("rollout")
@click.option("--config", "config_id", required=True)
@click.option("--policy", "policy_text", default="opt", show_default=True)
@click.option("--mode", type=click.Choice(["sparse", "dense"]), default="sparse",
              show_default=True)
@click.option("--retail", is_flag=True)
@click.option("--seed", type=int, default=None,
              help="Scenario seed (default: the noise-free base profile).")
@click.option("--out", "out_path", type=click.Path(), default="-",
              show_default=True, help="Json file, - for stdout.")
def rollout_command(config_id, policy_text, mode, retail, seed, out_path):
    """Trace one episode (observations, rewards, actions) as json.

    The default opt trace on the noise-free profile is the reference run
    for fitting observation and reward standardizers.
    """
    try:
        config = load_config(config_id)
        spec = parse_policy_spec(policy_text)
        trace = rollout_trace(
            config, spec, CostMode(dense=mode == "dense", retail=retail),
            seed=seed,
        )
    except (ValueError, RuntimeError, OSError) as error:
        _fail(error)
    handle = click.open_file(out_path, "w")
    json.dump(trace, handle, sort_keys=True)
    handle.write("\n")
    if out_path != "-":
        handle.close()
        click.echo(f"{len(trace['rewards'])} steps written to {out_path}")
