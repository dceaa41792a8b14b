#!/usr/bin/env python3
"""
CovariantTCL - exact convolutionless reduced dynamics of open quantum systems
CLI Entry Point
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List

import numpy as np

# Add project root to Python path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from CovariantTCL.solver.foliation import RELABELINGS, flat_foliation, reparametrize
from CovariantTCL.solver.hs_algebra import (
    SpaceLayout,
    fidelity,
    hermitian_part,
    projector_P,
    projector_Q,
    purity,
    random_density_matrix,
    random_operator,
    trace_norm,
    vectorize,
)
from CovariantTCL.solver.oracle import (
    dephasing_reference,
    exact_reduced_single_expm,
    exact_series,
)
from CovariantTCL.solver.perturb import (
    DriveProtocol,
    finite_field_response,
    first_order_series,
    fit_order,
    linear_response_series,
    polarization_response,
    ramped_cosine,
    second_order_series,
)
from CovariantTCL.solver.propagate import (
    MINUS_I,
    PLUS_I,
    TCLSolver,
    apply_reduced_map,
    channel_from_slice,
    check_generator,
    choi_matrix,
    generator_for,
    ordered_exp,
    theta_inverse_direct,
)
from CovariantTCL.utils.config_validator import RunConfig, validate_run_config, worker_count
from CovariantTCL.utils.exceptions import (
    ConfigError,
    DimensionError,
    GridError,
    HermiticityError,
    ModelError,
    StateValidationError,
    TCLBreakdownError,
)
from CovariantTCL.utils.logger import log_run_summary, set_quiet, setup_logger
from CovariantTCL.utils.series import (
    format_float,
    matrix_cells,
    matrix_columns,
    matrix_payload,
    vector_payload,
    write_csv_atomic,
    write_json_atomic,
)

logger = setup_logger(__name__)

SUBCOMMANDS = ("simulate", "oracle", "channel", "perturb", "linresp", "converge", "identities")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_BREAKDOWN = 3
EXIT_IDENTITY = 4

INPUT_ERRORS = (ConfigError, GridError, ModelError, StateValidationError, HermiticityError, DimensionError)


class CovariantTCLCLI:
    def __init__(self, config: RunConfig, out_dir: Path, quiet: bool = False):
        self.config = config
        self.out_dir = Path(out_dir)
        self.quiet = quiet
        self.tol = config.tolerances
        self.workers = worker_count()

    def _say(self, message: str):
        if not self.quiet:
            print(message)

    def _fan_out(self, fn, items: List):
        """Run independent sweep points on the worker pool, results in input order"""
        if len(items) <= 1 or self.workers <= 1:
            return [fn(item) for item in items]
        logger.info(f"Fanning out {len(items)} sweep points over {min(self.workers, len(items))} workers")
        with ThreadPoolExecutor(max_workers=min(self.workers, len(items))) as pool:
            return list(pool.map(fn, items))

    def _drive(self) -> DriveProtocol:
        f = self.config.foliation
        start = float(f.times[0])
        field = ramped_cosine(
            amplitude=self.config.number("drive.amplitude", 0.02),
            frequency=self.config.number("drive.frequency", 1.0),
            start=start,
            ramp=self.config.number("drive.ramp", 1.0),
            phase=self.config.number("drive.phase", 0.0),
        )
        return DriveProtocol(self.config.operator("drive.operator", "sigma_x"), field, start)

    def _scaled_models(self, strengths: List[float]):
        model = self.config.model
        base = model.couplings[0].strength if model.couplings else 0.0
        if base == 0.0:
            raise ConfigError("a coupling sweep needs a model with non-zero coupling", field="model.params.g",
                              line=self.config.line_of("model.params.g"))
        return [model.with_strengths(s / base) for s in strengths]

    # -- subcommands -----------------------------------------------------------

    def simulate(self) -> Dict:
        """Reduced state on every slice with trace, purity and oracle fidelity"""
        model, f = self.config.model, self.config.foliation
        with_oracle = self.config.flag("oracle", True)
        solver = TCLSolver(generator_for(model), f, self.tol.condition_max, self.tol.positivity)
        states = [s.rho for s in solver.sweep(model.rho0_sys)]
        logger.info(f"TCL sweep done: {f.n} slices, max condition estimate {solver.max_condition:.3e}")

        exact = exact_series(model, f, self.tol.leakage) if with_oracle else None
        header = ["t"] + matrix_columns("rho", model.layout.d_sys) + [
            "trace", "purity", "fidelity_vs_oracle", "bath_top_population", "flag"]
        rows, flagged, worst = [], 0, 0.0
        for k, rho in enumerate(states):
            trace = np.trace(rho)
            flags = []
            if abs(trace - 1.0) > self.tol.row_trace_flag:
                flags.append("trace")
            fid, top = "", ""
            if exact is not None:
                reference = exact.states.at(k)
                error = trace_norm(rho - reference)
                worst = max(worst, error)
                if error > self.tol.oracle_agreement:
                    flags.append("oracle")
                fid = format_float(fidelity(hermitian_part(rho), reference))
                top = format_float(exact.bath_top_population[k])
            flagged += bool(flags)
            rows.append([format_float(f.times[k])] + matrix_cells(rho)
                        + [format_float(trace.real), format_float(purity(rho)), fid, top, ";".join(flags)])
        if flagged:
            logger.warning(f"{flagged} of {len(rows)} rows flagged")
        write_csv_atomic(self.out_dir / "simulate.csv", header, rows)
        self._say(f"📈 simulate: {len(rows)} slices written, {flagged} flagged")
        return {"slices": len(rows), "flagged": flagged, "max_oracle_error": f"{worst:.3e}",
                "max_condition": f"{solver.max_condition:.3e}"}

    def oracle(self) -> Dict:
        """Brute-force reduced states, plus the closed form for the dephasing model"""
        model, f = self.config.model, self.config.foliation
        exact = exact_series(model, f, self.tol.leakage)
        reference = None
        if model.name == "dephasing" and np.isinf(model.params.get("beta", np.inf)):
            reference = dephasing_reference(model.params["g"], model.params["omega"], f, model.rho0_sys,
                                            picture=model.picture)
        header = ["t"] + matrix_columns("rho", model.layout.d_sys) + ["trace", "purity", "bath_top_population"]
        if reference is not None:
            header.append("closed_form_error")
        rows = []
        for k in range(len(exact.states)):
            rho = exact.states.at(k)
            row = [format_float(f.times[k])] + matrix_cells(rho) + [
                format_float(np.trace(rho).real), format_float(purity(rho)),
                format_float(exact.bath_top_population[k])]
            if reference is not None:
                row.append(format_float(trace_norm(rho - reference.at(k))))
            rows.append(row)
        write_csv_atomic(self.out_dir / "oracle.csv", header, rows)
        self._say(f"🔎 oracle: {len(rows)} slices written")
        return {"slices": len(rows), "max_top_population": f"{np.max(exact.bath_top_population):.3e}"}

    def channel(self) -> Dict:
        """Reduced dynamical map at one slice, its Choi spectrum and consistency checks"""
        model, f = self.config.model, self.config.foliation
        k = f.check_index(self.config.integer("slice", f.n))
        tcl_slice = TCLSolver(generator_for(model), f, self.tol.condition_max).at(k)
        channel = channel_from_slice(tcl_slice, model.layout, model.rho_bath)
        choi = choi_matrix(channel)
        spectrum = np.linalg.eigvalsh(hermitian_part(choi))

        rng = np.random.default_rng(self.config.integer("seed", 7))
        consistency = 0.0
        for _ in range(self.config.integer("random_states", 20)):
            rho0 = random_density_matrix(model.layout.d_sys, rng)
            direct = apply_reduced_map(tcl_slice.reduced_map, model.layout, model.rho_bath, rho0)
            consistency = max(consistency, float(np.max(np.abs(channel.apply(rho0) - direct))))

        d = model.layout.d_sys
        trace_error = 0.0
        for a in range(d):
            for b in range(d):
                unit = np.zeros((d, d), dtype=complex)
                unit[a, b] = 1.0
                trace_error = max(trace_error, abs(np.trace(channel.apply(unit)) - (1.0 if a == b else 0.0)))

        payload = {
            "slice": k,
            "time": format_float(f.times[k]),
            "channel": matrix_payload(channel.matrix),
            "choi_eigenvalues": vector_payload(spectrum),
            "choi_min_eigenvalue": format_float(spectrum[0]),
            "choi_psd": bool(spectrum[0] >= self.tol.choi_min),
            "trace_preservation_error": format_float(trace_error),
            "consistency_error": format_float(consistency),
            "consistent": bool(consistency <= self.tol.channel_consistency),
            "theta_condition": format_float(tcl_slice.theta_condition),
            "w_condition": format_float(tcl_slice.w_condition),
        }
        write_json_atomic(self.out_dir / "channel.json", payload)
        self._say(f"🧮 channel at t={f.times[k]:.4g}: min Choi eigenvalue {spectrum[0]:.3e}")
        return {"slice": k, "choi_min": f"{spectrum[0]:.3e}", "consistency": f"{consistency:.3e}"}

    def perturb(self) -> Dict:
        """First-order and second-order series plus the coupling scaling study"""
        model, f = self.config.model, self.config.foliation
        drive = self._drive()
        first = first_order_series(model, drive, f)
        second = second_order_series(model, f)
        exact = exact_series(model, f, self.tol.leakage).states
        d = model.layout.d_sys

        header = (["t"] + matrix_columns("rho1_", d) + matrix_columns("drho2_", d)
                  + ["second_order_error"])
        rows = []
        for k in range(f.n + 1):
            error = trace_norm(exact.at(k) - model.rho0_sys - second.at(k))
            rows.append([format_float(f.times[k])] + matrix_cells(first.at(k)) + matrix_cells(second.at(k))
                        + [format_float(error)])
        write_csv_atomic(self.out_dir / "perturb.csv", header, rows)

        strengths = self.config.numbers("strengths", [0.05, 0.1, 0.2])

        def remainder(scaled_model) -> float:
            rho_exact = exact_series(scaled_model, f, self.tol.leakage).states.at(f.n)
            return trace_norm(rho_exact - scaled_model.rho0_sys - second_order_series(scaled_model, f).at(f.n))

        errors = self._fan_out(remainder, self._scaled_models(strengths))
        slope = fit_order(strengths, errors)
        write_json_atomic(self.out_dir / "perturb_scaling.json", {
            "strengths": vector_payload(strengths),
            "errors": vector_payload(errors),
            "fitted_slope": format_float(slope),
        })
        self._say(f"📐 perturb: second-order remainder slope {slope:.3f}")
        return {"slices": len(rows), "slope": f"{slope:.3f}"}

    def linresp(self) -> Dict:
        """Kubo response against the finite-field difference, with an amplitude scaling study"""
        model, f = self.config.model, self.config.foliation
        drive = self._drive()
        observable = self.config.operator("observable", "sigma_y")
        kubo = linear_response_series(model, drive, observable, f).values
        exact = finite_field_response(model, drive, observable, f).values
        polarized = polarization_response(model, drive, observable, f).values

        header = ["t", "kubo_re", "kubo_im", "finite_field_re", "finite_field_im", "difference",
                  "polarization_re", "polarization_im"]
        rows = [[format_float(f.times[k]), format_float(kubo[k].real), format_float(kubo[k].imag),
                 format_float(exact[k].real), format_float(exact[k].imag),
                 format_float(abs(kubo[k] - exact[k])),
                 format_float(polarized[k].real), format_float(polarized[k].imag)]
                for k in range(f.n + 1)]
        write_csv_atomic(self.out_dir / "linresp.csv", header, rows)

        amplitudes = self.config.numbers("amplitudes", [0.01, 0.02, 0.04])
        base = self.config.number("drive.amplitude", 0.02)

        def discrepancy(amplitude: float) -> float:
            scaled = drive.scaled(amplitude / base)
            predicted = linear_response_series(model, scaled, observable, f).values
            measured = finite_field_response(model, scaled, observable, f).values
            return float(np.max(np.abs(predicted - measured)))

        errors = self._fan_out(discrepancy, amplitudes)
        slope = fit_order(amplitudes, errors)
        write_json_atomic(self.out_dir / "linresp_scaling.json", {
            "amplitudes": vector_payload(amplitudes),
            "errors": vector_payload(errors),
            "fitted_slope": format_float(slope),
        })
        self._say(f"📡 linresp: Kubo remainder slope {slope:.3f}")
        return {"slices": len(rows), "slope": f"{slope:.3f}"}

    def converge(self) -> Dict:
        """Error against single-exponential evolution for a sequence of grids"""
        model, f = self.config.model, self.config.foliation
        t0, t1 = float(f.times[0]), float(f.times[-1])
        n_values = [int(n) for n in self.config.numbers("n_values", [250, 500, 1000])]

        def grid_error(n: int) -> float:
            grid = flat_foliation(t0, t1, n, f.quadrature)
            solver = TCLSolver(generator_for(model), grid, self.tol.condition_max, self.tol.positivity)
            worst = 0.0
            for tcl_slice in solver.sweep(model.rho0_sys):
                reference = exact_reduced_single_expm(model, tcl_slice.time, t0)
                worst = max(worst, trace_norm(tcl_slice.rho - reference))
            return worst

        errors = self._fan_out(grid_error, n_values)
        steps = [(t1 - t0) / n for n in n_values]
        order = fit_order(steps, errors)
        write_json_atomic(self.out_dir / "converge.json", {
            "n_values": n_values,
            "steps": vector_payload(steps),
            "errors": vector_payload(errors),
            "fitted_order": format_float(order),
        })
        self._say(f"🎯 converge: fitted order {order:.3f}")
        return {"fitted_order": f"{order:.3f}"}

    def identities(self) -> Dict:
        """Projector, propagator and solver identities as a pass/fail report"""
        model, f = self.config.model, self.config.foliation
        rng = np.random.default_rng(self.config.integer("seed", 11))
        samples = self.config.integer("samples", 100)
        pairs = self.config.integer("pairs", 10)
        tol = self.tol
        checks = []

        def record(name: str, value: float, tolerance: float):
            checks.append({"name": name, "value": format_float(value), "tolerance": format_float(tolerance),
                           "passed": bool(value <= tolerance)})

        # projector algebra on the model layout and on random bath states
        layouts = [(model.layout, model.rho_bath)]
        for d_bath in (2, 4):
            layout = SpaceLayout(2, d_bath)
            layouts.append((layout, random_density_matrix(d_bath, rng)))
        for layout, rho_b in layouts:
            P, Q = projector_P(rho_b, layout), projector_Q(rho_b, layout)
            worst = 0.0
            for _ in range(samples):
                x = vectorize(random_operator(layout.D, rng))
                worst = max(worst,
                            np.max(np.abs(P.matrix @ (P.matrix @ x) - P.matrix @ x)),
                            np.max(np.abs(Q.matrix @ (Q.matrix @ x) - Q.matrix @ x)),
                            np.max(np.abs(P.matrix @ (Q.matrix @ x))),
                            np.max(np.abs(Q.matrix @ (P.matrix @ x))))
            record(f"projector_algebra_D{layout.D}", float(worst), tol.projector)

        gen = generator_for(model)
        record("generator_hermitian", check_generator(gen, rng.uniform(f.times[0], f.times[-1], 5)),
               tol.hermiticity)

        forward = ordered_exp(gen, f, MINUS_I, "time")
        backward = ordered_exp(gen, f, PLUS_I, "anti-time")
        projected = ordered_exp(gen, f, MINUS_I, "time", block="Q")
        system = ordered_exp(gen, f, MINUS_I, "time", block="P")
        identity = np.eye(model.layout.D ** 2)
        pairing, composition = 0.0, 0.0
        for _ in range(pairs):
            a, b, c = sorted(rng.integers(0, f.n + 1, size=3))
            pairing = max(pairing, np.max(np.abs(forward(a, c).matrix @ backward(a, c).matrix - identity)))
            for table in (forward, projected, system):
                composition = max(composition, np.max(np.abs(
                    table(a, c).matrix - table(b, c).matrix @ table(a, b).matrix)))
            composition = max(composition, np.max(np.abs(
                backward(a, c).matrix - backward(a, b).matrix @ backward(b, c).matrix)))
        record("inverse_pairing", float(pairing), tol.inverse_pairing)
        record("composition", float(composition), tol.composition)

        solver = TCLSolver(gen, f, tol.condition_max, tol.positivity)
        probe = int(rng.integers(1, f.n + 1))
        trace_error, hermiticity_error, recursion_error = 0.0, 0.0, 0.0
        states, last = [], None
        for last in solver.sweep(model.rho0_sys):
            rho = last.rho
            states.append(rho)
            trace_error = max(trace_error, abs(np.trace(rho) - 1.0))
            hermiticity_error = max(hermiticity_error, float(np.max(np.abs(rho - rho.conj().T))))
            if last.index == probe:
                direct = theta_inverse_direct(gen, f, probe).matrix
                recursion_error = float(np.max(np.abs(direct @ last.theta - identity)))
        record("trace_preservation", trace_error, tol.trace)
        record("hermiticity_preservation", hermiticity_error, tol.trace)
        record("theta_recursion", recursion_error, tol.composition)

        relabeled = reparametrize(f, RELABELINGS["cubic"])
        relabel_error = 0.0
        for tcl_slice in TCLSolver(gen, relabeled, tol.condition_max).sweep(model.rho0_sys):
            relabel_error = max(relabel_error, float(np.max(np.abs(tcl_slice.rho - states[tcl_slice.index]))))
        record("relabel_invariance", relabel_error, 1e-12)

        channel = channel_from_slice(last, model.layout, model.rho_bath)
        consistency = float(np.max(np.abs(channel.apply(model.rho0_sys) - states[-1])))
        record("channel_consistency", consistency, tol.channel_consistency)

        passed = all(check["passed"] for check in checks)
        write_json_atomic(self.out_dir / "identities.json", {"passed": passed, "checks": checks})
        failed = [check["name"] for check in checks if not check["passed"]]
        if failed:
            logger.error(f"Identity checks failed: {', '.join(failed)}")
            self._say(f"❌ identities: {len(failed)} of {len(checks)} checks failed")
        else:
            self._say(f"✅ identities: all {len(checks)} checks passed")
        return {"checks": len(checks), "failed": len(failed)}


def run(config_path, subcommand: str, out_path, quiet: bool = False) -> int:
    """Validate the config, run one subcommand, write its artifacts; returns the exit code"""
    set_quiet(quiet)
    if subcommand not in SUBCOMMANDS:
        logger.error(f"Unknown subcommand '{subcommand}', expected one of {SUBCOMMANDS}")
        return EXIT_CONFIG
    try:
        config = validate_run_config(config_path)
        cli = CovariantTCLCLI(config, Path(out_path), quiet)
        summary = getattr(cli, subcommand)()
    except INPUT_ERRORS as exc:
        logger.error(f"Invalid input: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TCLBreakdownError as exc:
        logger.error(f"Convolutionless form broke down: {exc}")
        print(f"breakdown: slice {exc.slice_index}, t={exc.time:.6g}, {exc.operator} "
              f"condition {exc.condition:.3e}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except Exception as exc:
        logger.exception(f"Unexpected failure in {subcommand}: {exc}")
        return EXIT_UNEXPECTED

    log_run_summary(subcommand, summary)
    if subcommand == "identities" and summary["failed"]:
        return EXIT_IDENTITY
    return EXIT_OK


def main():
    parser = argparse.ArgumentParser(description='CovariantTCL - exact convolutionless reduced dynamics')
    parser.add_argument('subcommand', choices=SUBCOMMANDS, help='What to run')
    parser.add_argument('--config', required=True, metavar='PATH', help='JSON run configuration')
    parser.add_argument('--out', required=True, metavar='DIR', help='Directory for result files')
    parser.add_argument('--quiet', action='store_true', help='Only warnings and errors on the console')

    args = parser.parse_args()
    sys.exit(run(args.config, args.subcommand, args.out, args.quiet))


if __name__ == "__main__":
    main()
