"""End-to-end steps behind the command-line tool.

Each ``run_*`` function reads and writes files only through the formats of
:mod:`nnmid.io` and embeds the configuration hash and seeds in its outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import plotting
from .basis import NonlinearBasis, build_spline_basis, polynomial_basis
from .config import provenance
from .continuation import (NNMBranch, branch_outputs, continue_branch,
                           orbit_straightness, StepControl)
from .errors import ComparisonError, ConfigurationError, DataError
from .excitation import (MultisineSpec, SteppedSineSchedule, generate_multisine,
                         write_signal_csv)
from .fnsi import FNSI, StateSpaceModel, mac
from .io import read_json, read_table_csv, write_json, write_table_csv
from .modal import ModalModel, build_modal_model, modal_model_from_fe
from .model import (BeamGeometry, BeamMaterial, BeamMesh, BENCHMARK_UPDATE, ModelUpdate,
                    NOMINAL_UPDATE, assemble_beam_model)
from .phaseres import (WaveletRidge, appropriation_sweep, compare_backbones,
                       free_decay, wavelet_ridge)
from .simulate import TimeSeriesRecord, add_noise, decimate, newmark_integrate


def build_structure(cfg):
    """FE model and true nonlinear basis from the ``model`` section."""
    m = cfg["model"]
    update = m["update"]
    if update == "benchmark":
        update = BENCHMARK_UPDATE
    elif update in (None, "nominal"):
        update = NOMINAL_UPDATE
    elif isinstance(update, dict):
        update = ModelUpdate(**{k: float(v) for k, v in update.items()})
    else:
        raise ConfigurationError("model.update: expected 'benchmark', 'nominal' or a mapping")
    try:
        geometry = BeamGeometry(**m["geometry"])
        material = BeamMaterial(**m["material"])
        mesh = BeamMesh(**m["mesh"])
    except TypeError as exc:
        raise ConfigurationError(f"model: {exc}") from None
    damping = (float(m["damping"]["alpha"]), float(m["damping"]["beta"]))
    fe = assemble_beam_model(geometry, material, mesh, damping, update,
                             forcing_node=int(m["forcing_node"]))
    nl = m["nonlinearity"]
    dof = fe.translation_dof(int(nl["node"]))
    basis = polynomial_basis([3, 2], dof, [float(nl["cubic"]), float(nl["quadratic"])])
    return fe, basis


def output_dofs(fe, cfg):
    nodes = cfg["simulation"]["output_nodes"]
    return [fe.translation_dof(n) for n in nodes], [f"node{n}" for n in nodes]


def truth_model(cfg, n_modes=3):
    """Modal model of the simulated structure restricted to measured DOFs."""
    fe, basis = build_structure(cfg)
    dofs, labels = output_dofs(fe, cfg)
    return modal_model_from_fe(fe, basis, n_modes, dofs=dofs, labels=labels)


def simulate_record(cfg):
    """Clean and noisy decimated records plus SNR per channel."""
    fe, basis = build_structure(cfg)
    exc = cfg["excitation"]
    sim = cfg["simulation"]
    spec = MultisineSpec(exc["f_min"], exc["f_max"], exc["samples_per_period"],
                         exc["fs"], exc["rms"], exc["periods"], exc["seed"])
    signal = generate_multisine(spec)
    dofs, labels = output_dofs(fe, cfg)
    rec = newmark_integrate(fe, basis, signal.signal, exc["fs"], output_dofs=dofs,
                            labels=labels, periods=exc["periods"])
    clean = decimate(rec, sim["decimation"])
    del rec
    noisy, snr = add_noise(clean, sim["noise_level"], sim["noise_reference"],
                           seed=sim["noise_seed"])
    return clean, noisy, snr, signal


def run_simulate(cfg, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = provenance(cfg)
    clean, noisy, snr, signal = simulate_record(cfg)
    write_signal_csv(out / "force.csv", noisy.force, noisy.fs, meta=meta)
    noisy.to_csv(out / "response.csv", **meta)
    finite = {k: v for k, v in snr.items() if math.isfinite(v)}
    write_json(out / "metadata.json", {
        "config": cfg, "fs": noisy.fs, "periods": noisy.periods,
        "samples_per_period": noisy.samples_per_period,
        "excited_lines": int(signal.lines.size),
        "snr_db": finite or None,
    }, **meta)
    truth_model(cfg).to_json(out / "truth.json", **meta)
    return out


def load_dataset(path):
    path = Path(path)
    target = path / "response.csv" if path.is_dir() else path
    if not target.exists():
        raise DataError(f"dataset file '{target}' does not exist")
    return TimeSeriesRecord.from_csv(target)


def identification_basis(cfg, record):
    spec = cfg["identification"]["basis"]
    kind = spec.get("kind", "polynomial")
    if kind == "none":
        return NonlinearBasis()
    label = f"node{int(spec.get('node', 14))}"
    if label not in record.labels:
        raise DataError(f"channel '{label}' required by the basis is missing")
    dof = record.dofs[record.labels.index(label)]
    if kind == "polynomial":
        return polynomial_basis(spec.get("degrees", [3, 2]), dof)
    x = record.channel(label)
    return build_spline_basis((float(x.min()), float(x.max())),
                              int(spec.get("segments", 10)), dof=dof)


def identify(cfg, record):
    """Fit FNSI with the configured order; ``order: auto`` uses the
    stabilization diagram rule. Returns the estimator, diagram and order."""
    ident = cfg["identification"]
    basis = identification_basis(cfg, record)
    order = ident["order"]
    est = FNSI(order=6 if order == "auto" else order, max_order=ident["max_order"],
               block_rows=ident["block_rows"], band=tuple(ident["band"]),
               discard_periods=ident["discard_periods"], weighting=ident["weighting"])
    est.fit(record, basis)
    diagram = est.stabilization(thresholds=ident["thresholds"])
    if order == "auto":
        selected = diagram.select_order()
        if selected is None:
            raise DataError("no stable mode found; cannot select an order")
        if selected != est.order:
            est.set_params(order=selected)
            est.fit_spectra(est.spectra_)
    return est, diagram


def _term_labels(basis):
    return [f"{d['kind']}:{d.get('degree', d.get('index'))}" for d in basis.describe()]


def run_identify(cfg, dataset, out, truth=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = provenance(cfg)
    record = load_dataset(dataset)
    est, diagram = identify(cfg, record)
    est.model_.to_json(out / "model.json", **meta)
    diagram.to_csv(out / "stabilization.csv", **meta)
    plotting.plot_stabilization(diagram, out / "stabilization.svg")
    basis = est.spectra_.basis
    report = {"order": est.model_.order, "selected_order": diagram.select_order(),
              "modes": [{"frequency_hz": m.frequency, "damping_ratio": m.zeta}
                        for m in est.modes_]}
    modal = None
    if est.coefficients_ is not None:
        coef = est.coefficients_
        coef.to_csv(out / "coefficients.csv", **meta)
        labels = _term_labels(basis)
        plotting.plot_coefficients(coef, labels, out / "coefficients.svg")
        contrib = _contributions(basis.with_coefficients(coef.summary), record)
        thr = cfg["identification"]["negligible_log_ratio"]
        report["coefficients"] = [
            {"term": labels[a], "value": float(coef.summary[a]),
             "log10_re_im": float(coef.log_ratio[a]),
             "relative_contribution": float(contrib[a]),
             "negligible": bool(contrib[a] < 1e-3 or coef.log_ratio[a] < thr)}
            for a in range(len(labels))]
        modal = build_modal_model(est.model_, coef.summary, basis)
    else:
        modal = build_modal_model(est.model_, [], NonlinearBasis())
    modal.to_json(out / "modal_model.json", **meta)
    if truth is not None:
        report["errors"] = error_table(est, ModalModel.from_json(truth))
    write_json(out / "report.json", report, **meta)
    return out


def _contributions(basis, record):
    """Peak of each term force over the record relative to the peak input."""
    from .basis import eval_restoring_force

    n = max(record.dofs) + 1
    q = np.zeros((record.n_samples, n))
    q[:, list(record.dofs)] = record.channels.T
    peak_force = max(np.abs(record.force).max(), np.finfo(float).tiny)
    out = []
    for term in basis.terms:
        f = eval_restoring_force(NonlinearBasis([term]), q)
        out.append(np.abs(f).max() / peak_force)
    return np.array(out)


def error_table(est, truth):
    """Relative frequency/damping errors and MAC of identified modes against
    a reference modal model (matched by nearest frequency)."""
    rows = []
    for i in range(truth.n_modes):
        f_true = truth.omega0[i] / (2 * np.pi)
        m = min(est.modes_, key=lambda md: abs(md.frequency - f_true))
        rows.append({
            "mode": i + 1, "frequency_hz": m.frequency, "reference_hz": f_true,
            "frequency_error": m.frequency / f_true - 1,
            "damping_ratio": m.zeta, "reference_damping": float(truth.zeta[i]),
            "damping_error": (m.zeta / truth.zeta[i] - 1) if truth.zeta[i] else None,
            "mac": mac(m.shape, truth.Phi[:, i]),
        })
    return rows


@dataclass(frozen=True)
class BranchTable:
    """Branch columns read back from CSV."""

    mode: int
    frequencies: np.ndarray
    amplitudes: np.ndarray
    fundamental_amplitudes: np.ndarray
    energies: np.ndarray


def read_branch_csv(path):
    cols, meta = read_table_csv(path)
    if "mode" not in meta:
        raise DataError(f"'{path}' is not a branch file")
    return BranchTable(int(meta["mode"]), cols["frequency_hz"], cols["amplitude_m"],
                       cols["fundamental_amplitude_m"], cols["energy_J"])


def read_ridge_csv(path):
    cols, meta = read_table_csv(path)
    if "frequency_hz" not in cols or "amplitude" not in cols:
        raise DataError(f"'{path}' is not a ridge file")
    ridge = WaveletRidge(cols["time_s"], cols["frequency_hz"], cols["amplitude"],
                         cols["valid"] > 0.5, float(meta.get("omega_c", "nan")), np.array([]))
    mode = int(meta["mode"]) if "mode" in meta else None
    return ridge, mode


def continuation_dof(model, node):
    label = f"node{int(node)}"
    if label in model.labels:
        return model.dofs[model.labels.index(label)]
    raise ConfigurationError(f"continuation.node: node {node} is not in the modal model")


def continue_modes(cfg, model):
    c = cfg["continuation"]
    dof = continuation_dof(model, c["node"])
    branches = []
    for mode in c["modes"]:
        branches.append(continue_branch(
            model, int(mode), dof=dof, max_amplitude=c["max_amplitude"],
            max_energy=c["max_energy"], seed_amplitude=c["seed_amplitude"],
            tol=c["tolerance"], rtol=c["rtol"]))
    return branches, dof


def branch_error(branch, reference):
    """Relative frequency error of ``branch`` against ``reference`` at equal
    amplitude over the shared range."""
    a, f = branch.amplitudes, branch.frequencies
    ra, rf = reference.amplitudes, reference.frequencies
    n = int(np.argmax(np.diff(ra) <= 0)) + 1 if np.any(np.diff(ra) <= 0) else ra.size
    ra, rf = ra[:n], rf[:n]
    sel = (a >= ra.min()) & (a <= ra.max())
    if not sel.any():
        raise ComparisonError("branches do not overlap in amplitude")
    return f[sel] / np.interp(np.log(a[sel]), np.log(ra), rf) - 1


def run_continue(cfg, model_path, out, truth=None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = provenance(cfg)
    model = ModalModel.from_json(model_path)
    branches, dof = continue_modes(cfg, model)
    c = cfg["continuation"]
    pair = [continuation_dof(model, n) for n in c["orbit_pair"]]
    report = {"branches": []}
    for br in branches:
        tag = f"mode{br.mode + 1}"
        br.to_csv(out / f"backbone_{tag}.csv", **meta)
        br.to_json(out / f"backbone_{tag}.json", **meta)
        outputs = branch_outputs(br, amplitudes=c["orbit_amplitudes"], model=model, pair=pair)
        orbit_cols = {}
        for k, (amp, xy) in enumerate(outputs["orbits"]):
            orbit_cols[f"orbit{k}_x"] = xy[:, 0]
            orbit_cols[f"orbit{k}_y"] = xy[:, 1]
        if orbit_cols:
            write_table_csv(out / f"orbits_{tag}.csv", orbit_cols,
                            meta=dict(meta, amplitudes=";".join(
                                f"{a:.6e}" for a, _ in outputs["orbits"])))
            plotting.plot_orbits(outputs["orbits"], out / f"orbits_{tag}.svg",
                                 axis_labels=tuple(f"node{n} (m)" for n in c["orbit_pair"]))
        entry = {"mode": br.mode, "points": len(br),
                 "termination": br.meta["termination"],
                 "linear_frequency_hz": float(model.omega0[br.mode] / (2 * np.pi)),
                 "max_amplitude_m": float(br.amplitudes.max()),
                 "max_residual": float(br.residuals.max()),
                 "orbit_straightness": [orbit_straightness(xy) for _, xy in outputs["orbits"]]}
        if truth is not None:
            ref_model = ModalModel.from_json(truth)
            ref = continue_branch(ref_model, br.mode,
                                  dof=continuation_dof(ref_model, c["node"]),
                                  max_amplitude=c["max_amplitude"], max_energy=c["max_energy"],
                                  seed_amplitude=c["seed_amplitude"], tol=c["tolerance"],
                                  rtol=c["rtol"])
            err = branch_error(br, ref)
            entry["max_relative_error_vs_truth"] = float(np.abs(err).max())
        report["branches"].append(entry)
    plotting.plot_backbones(branches, out / "backbones.svg")
    plotting.plot_fep(branches, out / "fep.svg")
    write_json(out / "report.json", report, **meta)
    return out


def phase_resonance(cfg):
    fe, basis = build_structure(cfg)
    pr = cfg["phase_resonance"]
    dofs, _ = output_dofs(fe, cfg)
    dof = fe.translation_dof(int(pr["node"]))
    schedule = SteppedSineSchedule(pr["f_start"], pr["f_end"], pr["df"], pr["amplitude"],
                                   pr["settle_periods"], pr["measure_periods"])
    result = appropriation_sweep(fe, basis, schedule, fs=pr["fs"], measured_dofs=dofs,
                                 dof=dof, threshold=pr["threshold"])
    if result.index < 0:
        return result, None, None
    decay = free_decay(fe, basis, result.state, pr["fs"], dof=dof, floor=pr["floor"],
                       output_dofs=[dof])
    ridge = wavelet_ridge(decay.channels[0], pr["fs"], tuple(pr["wavelet_band"]),
                          omega_c=pr["omega_c"], voices=pr["voices"])
    return result, decay, ridge


def run_phase_resonance(cfg, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = provenance(cfg)
    mode = int(cfg["phase_resonance"]["mode"])
    result, decay, ridge = phase_resonance(cfg)
    result.to_csv(out / "appropriation.csv", mode=mode, **meta)
    plotting.plot_appropriation(result, out / "appropriation.svg")
    report = {"mode": mode, "appropriated_frequency_hz": result.frequency,
              "appropriated_index": result.index}
    if ridge is not None:
        decay.to_csv(out / "decay.csv", **meta)
        ridge.to_csv(out / "ridge.csv", mode=mode, **meta)
        v = ridge.valid
        report["ridge_frequency_range_hz"] = [float(ridge.frequency[v].min()),
                                              float(ridge.frequency[v].max())]
    write_json(out / "report.json", report, **meta)
    if ridge is None:
        raise ComparisonError("no stepped-sine step reached the appropriation threshold")
    return out


def run_compare(branch_files, ridge_files, out, meta=None):
    if len(branch_files) != len(ridge_files):
        raise DataError("one ridge file per branch file is required")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    meta = meta or {}
    rows = []
    for bpath, rpath in zip(branch_files, ridge_files):
        branch = read_branch_csv(bpath)
        ridge, rmode = read_ridge_csv(rpath)
        if rmode is not None and rmode != branch.mode:
            raise DataError(
                f"mode mismatch: branch '{bpath}' is mode {branch.mode + 1}, "
                f"ridge '{rpath}' is mode {rmode + 1}")
        rep = compare_backbones(branch, ridge)
        rows.append(dict(rep.to_dict(), mode=branch.mode))
        v = ridge.valid
        plotting.plot_comparison(branch.fundamental_amplitudes, branch.frequencies,
                                 ridge.amplitude[v], ridge.frequency[v],
                                 out / f"comparison_mode{branch.mode + 1}.svg")
        write_table_csv(out / f"comparison_mode{branch.mode + 1}.csv",
                        {"amplitude_m": rep.amplitudes,
                         "branch_frequency_hz": rep.branch_frequency,
                         "ridge_frequency_hz": rep.ridge_frequency,
                         "relative_error": rep.relative_error}, meta=meta)
    write_json(out / "comparison.json", {"modes": rows}, **meta)
    return out
