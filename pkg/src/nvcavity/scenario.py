"""Declarative scenario files: strict parsing, canonical serialisation and
dispatch of each task to the numerical modules.

A scenario is a JSON object::

    {
      "version": "1",
      "task": "purcell",
      "params": {"q_factor": 1700, "lambda_cav": 637.0},
      "seed": 0,
      "output": {"path": "purcell.csv", "format": "csv"}
    }

Unknown keys anywhere are rejected. Missing optional parameters are filled
from the task's defaults.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import cavity_qed as cq
from . import fitting as ft
from . import photonics_tmm as tmm
from . import rate_model as rm
from . import spin_dynamics as sd
from .errors import InputError, NonConvergenceError, ParseError
from .tables import FORMATS, ResultTable

SCHEMA_VERSIONS = ("1",)
REQUIRED = object()
TOP_LEVEL = ("version", "task", "params", "seed", "output")


@dataclass(frozen=True)
class Param:
    kind: str  # float, int, bool, str, floats
    default: object = REQUIRED
    nullable: bool = False


def _f(default=REQUIRED, nullable=False):
    return Param("float", default, nullable)


def _i(default=REQUIRED):
    return Param("int", default)


_RATE_PARAMS = {
    "pump": _f(0.01),
    "relax_e": _f(rm.FAST_RELAX),
    "gamma_rad": _f(1 / 12.5),
    "dw": _f(0.028),
    "f_zpl": _f(1.0),
    "relax_g": _f(rm.FAST_RELAX),
    "gamma_isc": _f(0.0),
    "gamma_s": _f(1 / 250.0),
    "psb_scale": _f(1.0),
}

_SPIN_PARAMS = {
    "d_zfs": _f(sd.D_ZFS_GHZ),
    "gamma_e": _f(sd.GAMMA_E_MHZ_PER_MT),
    "b_field": _f(2.0),
    "a_hyperfine": _f(sd.A_15N_MHZ),
}

SCHEMAS = {
    "purcell": {
        "q_factor": _f(),
        "lambda_cav": _f(),
        "lambda_zpl": _f(637.0),
        "v_mode": _f(1.05),
        "n_index": _f(2.4),
        "xi": _f(1.0),
        "dipole_angle": _f(cq.DIPOLE_ANGLE_100),
        "f_zpl_measured": _f(None, nullable=True),
    },
    "tune_sweep": {
        "lambda_start": _f(),
        "lambda_zpl": _f(637.0),
        "q_factor": _f(),
        "v_mode": _f(1.05),
        "xi": _f(1.0),
        "dipole_angle": _f(cq.DIPOLE_ANGLE_100),
        "rate_pm_per_s": _f(8.0),
        "max_range": _f(31.0),
        "duration": _f(600.0),
        "n_points": _i(601),
    },
    "rates": {**_RATE_PARAMS, "t_end": _f(50.0), "n_points": _i(501),
              "method": Param("str", "auto")},
    "infer": {
        "tau_bulk": _f(),
        "tau_on": _f(),
        "tau_off": _f(),
        "intensity_ratio": _f(None, nullable=True),
        "forward_dw": _f(None, nullable=True),
        "f_zpl_off": _f(0.0),
        "pump": _f(0.05),
        "gamma_isc": _f(0.01),
        "gamma_s": _f(1 / 300.0),
        "psb_scale": _f(1.0),
    },
    "g2": {**_RATE_PARAMS, "tau_max": _f(100.0), "n_points": _i(401),
           "signal_fraction": _f(1.0)},
    "odmr": {**_SPIN_PARAMS, "f_start": _f(2.75), "f_stop": _f(3.0), "n_points": _i(1001),
             "linewidth": _f(5.0), "contrast": _f(0.2), "noise_sigma": _f(0.0)},
    "rabi": {**_SPIN_PARAMS, "omega_rabi": _f(5.0), "detuning": _f(0.0),
             "t2_prime": _f(None, nullable=True), "t_end": _f(4.0), "n_points": _i(801),
             "noise_sigma": _f(0.0)},
    "echo": {"t2": _f(230.0), "exponent_p": _f(1.0), "revival_period": _f(46.7),
             "revival_depth": _f(0.8), "revival_width": _f(5.0), "tau_max": _f(400.0),
             "n_points": _i(801), "noise_sigma": _f(0.0)},
    "fit": {
        "model": Param("str"),
        "x": Param("floats", None, nullable=True),
        "y": Param("floats", None, nullable=True),
        "sigma": Param("floats", None, nullable=True),
        "init": Param("floats", None, nullable=True),
        "true_params": Param("floats", None, nullable=True),
        "x_start": _f(0.0),
        "x_stop": _f(1.0),
        "n_points": _i(200),
        "noise_sigma": _f(0.0),
        "relative_noise": Param("bool", False),
        "max_iter": _i(200),
    },
    "tmm": {
        "a": _f(220.0),
        "taper_start_fraction": _f(0.9),
        "taper_periods": _i(5),
        "mirror_periods": _i(8),
        "fill_factor": _f(0.6),
        "n_eff_hi": _f(2.20),
        "n_eff_lo": _f(1.55),
        "index_scale": _f(tmm.DEFAULT_INDEX_SCALE),
        "lambda_start": _f(500.0),
        "lambda_stop": _f(900.0),
        "n_points": _i(2001),
    },
    "entangle": {
        "beta": _f(),
        "dw": _f(0.028),
        "reference_zpl_fraction": _f(None, nullable=True),
    },
}

TASK_DESCRIPTIONS = {
    "purcell": "maximum, orientation-reduced and detuned Purcell factors",
    "tune_sweep": "Purcell factor along a linear gas-tuning trajectory",
    "rates": "five-level population dynamics from the ground state",
    "infer": "joint (DW, F_ZPL) inversion from lifetimes and intensity ratio",
    "g2": "second-order autocorrelation with optional background",
    "odmr": "CW ODMR spectrum of the ground-state triplet",
    "rabi": "hyperfine-split Rabi oscillation",
    "echo": "Hahn-echo decay with bath revivals",
    "fit": "least-squares fit of a model to data or synthetic data",
    "tmm": "1D transfer-matrix scan of a tapered nanobeam cavity",
    "entangle": "entanglement-rate gain from the cavity beta factor",
}


def _noise_tasks(task, params):
    if task in ("odmr", "rabi", "echo"):
        return params["noise_sigma"] > 0
    if task == "fit":
        return params["x"] is None
    return False


@dataclass
class Scenario:
    version: str
    task: str
    params: dict
    seed: int | None = None
    output: dict = field(default_factory=dict)
    source: str = ""

    def to_dict(self):
        doc = {"version": self.version, "task": self.task, "params": self.params}
        if self.seed is not None:
            doc["seed"] = self.seed
        if self.output:
            doc["output"] = self.output
        return doc


def _line_of(text, key):
    needle = f'"{key}"'
    pos = text.find(needle)
    if pos < 0:
        return None
    return text.count("\n", 0, pos) + 1


def _coerce(value, spec, name, text):
    def fail(expected):
        raise ParseError(f"expected {expected}, got {type(value).__name__}",
                         field=name, line=_line_of(text, name.split(".")[-1]))

    if value is None:
        if spec.nullable:
            return None
        fail(spec.kind)
    if spec.kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            fail("number")
        return float(value)
    if spec.kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            fail("integer")
        return value
    if spec.kind == "bool":
        if not isinstance(value, bool):
            fail("boolean")
        return value
    if spec.kind == "str":
        if not isinstance(value, str):
            fail("string")
        return value
    if spec.kind == "floats":
        if not isinstance(value, list) or any(
                isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            fail("list of numbers")
        return [float(v) for v in value]
    raise AssertionError(spec.kind)


def parse_scenario(text):
    """Validate scenario text and return a :class:`Scenario` with defaults filled."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"scenario is not UTF-8: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("scenario must be a JSON object")
    for key in doc:
        if key not in TOP_LEVEL:
            raise ParseError(f"unknown key '{key}'", field=key, line=_line_of(text, key))
    for key in ("version", "task"):
        if key not in doc:
            raise ParseError("missing required field", field=key)
    version = doc["version"]
    if version not in SCHEMA_VERSIONS:
        raise ParseError(f"unsupported version {version!r}; expected one of {SCHEMA_VERSIONS}",
                         field="version", line=_line_of(text, "version"))
    task = doc["task"]
    if task not in SCHEMAS:
        raise ParseError(f"unknown task {task!r}; choose from {sorted(SCHEMAS)}",
                         field="task", line=_line_of(text, "task"))
    raw = doc.get("params", {})
    if not isinstance(raw, dict):
        raise ParseError("params must be an object", field="params",
                         line=_line_of(text, "params"))
    schema = SCHEMAS[task]
    params = {}
    for key, value in raw.items():
        if key not in schema:
            raise ParseError(f"unknown parameter '{key}' for task '{task}'",
                             field=f"params.{key}", line=_line_of(text, key))
    for key, spec in schema.items():
        if key in raw:
            params[key] = _coerce(raw[key], spec, f"params.{key}", text)
        elif spec.default is REQUIRED:
            raise ParseError("missing required parameter", field=f"params.{key}")
        else:
            params[key] = spec.default

    seed = doc.get("seed")
    if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int) or seed < 0):
        raise ParseError("seed must be a non-negative integer", field="seed",
                         line=_line_of(text, "seed"))
    if seed is None and _noise_tasks(task, params):
        raise ParseError("a seed is required when noise is synthesised", field="seed")

    output = doc.get("output", {})
    if not isinstance(output, dict):
        raise ParseError("output must be an object", field="output")
    for key in output:
        if key not in ("path", "format"):
            raise ParseError(f"unknown key '{key}'", field=f"output.{key}",
                             line=_line_of(text, key))
    if "format" in output and output["format"] not in FORMATS:
        raise ParseError(f"format must be one of {FORMATS}", field="output.format",
                         line=_line_of(text, "format"))
    if "path" in output and not isinstance(output["path"], str):
        raise ParseError("path must be a string", field="output.path")
    return Scenario(version=version, task=task, params=params, seed=seed,
                    output=dict(output), source=text)


def serialize(scenario):
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(scenario.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"


# -- task runners ---------------------------------------------------------

def _rates(p, **over):
    kw = {k: p[k] for k in _RATE_PARAMS}
    kw.update(over)
    return rm.FiveLevelRates(**kw)


def _spin(p, **over):
    kw = {k: p[k] for k in _SPIN_PARAMS}
    kw.update(over)
    return sd.SpinParams(**kw)


def _finite_or_none(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _run_purcell(p, seed):
    params = cq.EmitterCavityParams(q_factor=p["q_factor"], lambda_cav=p["lambda_cav"],
                                    lambda_zpl=p["lambda_zpl"], v_mode=p["v_mode"],
                                    n_index=p["n_index"], xi=p["xi"],
                                    dipole_angle=p["dipole_angle"])
    cols = {
        "F_max": params.f_max,
        "F_max_star": params.f_max_star,
        "F_zpl": params.f_zpl,
        "rel_detuning": cq.relative_detuning(p["lambda_zpl"], p["lambda_cav"]),
    }
    if p["f_zpl_measured"] is not None:
        cols["xi_measured"] = cq.overlap_xi(p["f_zpl_measured"], params.f_max_star)
    return cols, {}, {"kind": "table"}


def _run_tune_sweep(p, seed):
    params = cq.EmitterCavityParams(q_factor=p["q_factor"], lambda_cav=p["lambda_start"],
                                    lambda_zpl=p["lambda_zpl"], v_mode=p["v_mode"],
                                    xi=p["xi"], dipole_angle=p["dipole_angle"])
    schedule = cq.TuningSchedule(p["lambda_start"], p["rate_pm_per_s"], p["max_range"],
                                 p["duration"])
    t = np.linspace(0.0, schedule.duration, p["n_points"])
    lam, f = cq.tuning_sweep(params, schedule, t)
    cols = {"t_s": t, "lambda_cav_nm": lam,
            "rel_detuning": cq.relative_detuning(p["lambda_zpl"], lam), "F_zpl": f}
    return cols, {}, {"x": "rel_detuning", "y": ["F_zpl"]}


def _run_rates(p, seed):
    rates = _rates(p)
    m = rm.build_generator(rates)
    t = np.linspace(0.0, p["t_end"], p["n_points"])
    p0 = np.zeros(5)
    p0[rm.G] = 1.0
    traj = rm.evolve(m, p0, t, method=p["method"])
    ss = rm.steady_state(m)
    obs = rm.observables(rates, ss)
    cols = {"t_ns": t}
    for j, name in enumerate(("p_g", "p_estar", "p_e", "p_gstar", "p_s")):
        cols[name] = traj[:, j]
    summary = {"steady_state": [float(v) for v in ss], "beta": obs.beta,
               "tau_excited_ns": _finite_or_none(obs.tau_excited),
               "i_zpl_per_ns": obs.i_zpl, "i_psb_per_ns": obs.i_psb}
    return cols, summary, {"x": "t_ns", "y": ["p_g", "p_e", "p_s"]}


def _run_infer(p, seed):
    template = rm.FiveLevelRates(pump=p["pump"], gamma_rad=1.0 / p["tau_bulk"],
                                 gamma_isc=p["gamma_isc"], gamma_s=p["gamma_s"],
                                 psb_scale=p["psb_scale"])
    ratio = p["intensity_ratio"]
    if ratio is None:
        if p["forward_dw"] is None:
            raise InputError("infer needs either intensity_ratio or forward_dw")
        product = rm.fzpl_from_lifetimes(p["tau_bulk"], p["tau_on"], p["tau_off"], 1.0)
        ratio = rm.intensity_ratio(template, p["forward_dw"], product / p["forward_dw"],
                                   p["f_zpl_off"])
    dw, f_zpl = rm.solve_dw_fzpl(p["tau_bulk"], p["tau_on"], p["tau_off"], ratio, template,
                                 f_zpl_off=p["f_zpl_off"])
    beta = rm.observables(template.with_(dw=dw, f_zpl=f_zpl), np.eye(5)[rm.E]).beta
    cols = {"dw": dw, "F_zpl": f_zpl, "F_overall": dw * f_zpl, "beta": beta,
            "intensity_ratio": ratio}
    return cols, {}, {"kind": "table"}


def _run_g2(p, seed):
    rates = _rates(p)
    tau = np.linspace(0.0, p["tau_max"], p["n_points"])
    g2 = rm.g2_curve(rates, tau)
    return ({"tau_ns": tau, "g2": g2, "g2_bg": rm.g2_with_background(g2, p["signal_fraction"])},
            {}, {"x": "tau_ns", "y": ["g2", "g2_bg"]})


def _noise(p, seed, shape):
    if p["noise_sigma"] <= 0:
        return 0.0
    return np.random.default_rng(seed).normal(0.0, p["noise_sigma"], size=shape)


def _run_odmr(p, seed):
    spin = _spin(p)
    f = np.linspace(p["f_start"], p["f_stop"], p["n_points"])
    y = sd.odmr_spectrum(spin, f, p["linewidth"], p["contrast"]) + _noise(p, seed, f.shape)
    centres = [c for c, _ in sd.odmr_resonances(spin, p["linewidth"])]
    summary = {"line_centres_GHz": centres, "splitting_MHz": sd.odmr_splitting(spin)}
    return {"f_GHz": f, "signal": y}, summary, {"x": "f_GHz", "y": ["signal"]}


def _run_rabi(p, seed):
    t2p = p["t2_prime"] if p["t2_prime"] is not None else math.inf
    spin = _spin(p, t2_prime=t2p)
    t = np.linspace(0.0, p["t_end"], p["n_points"])
    y = sd.rabi_signal(p["omega_rabi"], spin, p["detuning"], t) + _noise(p, seed, t.shape)
    freqs = sd.generalized_rabi_frequencies(p["omega_rabi"], spin, p["detuning"])
    return ({"t_us": t, "p_ms0": y}, {"rabi_frequencies_MHz": list(freqs)},
            {"x": "t_us", "y": ["p_ms0"]})


def _run_echo(p, seed):
    model = sd.EchoModel(t2=p["t2"], exponent_p=p["exponent_p"],
                         revival_period=p["revival_period"], revival_depth=p["revival_depth"],
                         revival_width=p["revival_width"])
    tau = np.linspace(0.0, p["tau_max"], p["n_points"])
    y = sd.hahn_echo_signal(model, tau) + _noise(p, seed, tau.shape)
    return ({"tau_us": tau, "echo": y, "envelope": sd.echo_envelope(model, tau)}, {},
            {"x": "tau_us", "y": ["echo", "envelope"]})


def _run_fit(p, seed):
    model = ft.get_model(p["model"])
    sigma = None
    if p["x"] is not None:
        if p["y"] is None:
            raise InputError("fit with explicit x also needs y")
        x = np.asarray(p["x"])
        y = np.asarray(p["y"])
        if p["sigma"] is not None:
            sigma = np.asarray(p["sigma"])
    else:
        if p["true_params"] is None:
            raise InputError("fit needs data (x, y) or true_params for synthetic data")
        x = np.linspace(p["x_start"], p["x_stop"], p["n_points"])
        clean = model.evaluate(np.asarray(p["true_params"]), x)
        rng = np.random.default_rng(seed)
        scale = np.abs(clean) if p["relative_noise"] else np.ones_like(clean)
        sigma = p["noise_sigma"] * scale
        y = clean + sigma * rng.normal(size=x.shape)
        if p["noise_sigma"] <= 0:
            sigma = None
    weights = None if sigma is None else 1.0 / np.asarray(sigma) ** 2
    if p["max_iter"] < 1:
        raise InputError("max_iter must be >= 1")
    result = ft.fit(model, x, y, weights=weights, init=p["init"], max_iter=p["max_iter"])
    cols = {}
    for name, value, err in zip(model.param_names, result.params, result.sigma):
        cols[name] = value
        cols[f"{name}_sigma"] = err
    if model.kind == "lorentzian":
        cols["Q"] = ft.lorentzian_q(result.params)
        cols["Q_sigma"] = ft.lorentzian_q_sigma(result)
    cols["chi2_reduced"] = result.chi2_reduced
    cols["iterations"] = result.iterations
    cols["converged"] = float(result.converged)
    return cols, {"message": result.message}, {"kind": "table"}


def _run_tmm(p, seed):
    taper = tmm.TaperSpec(a=p["a"], taper_start_fraction=p["taper_start_fraction"],
                          taper_periods=p["taper_periods"], mirror_periods=p["mirror_periods"],
                          fill_factor=p["fill_factor"], n_eff_hi=p["n_eff_hi"],
                          n_eff_lo=p["n_eff_lo"], index_scale=p["index_scale"])
    lam = np.linspace(p["lambda_start"], p["lambda_stop"], p["n_points"])
    lam_res, q, (grid, t) = tmm.cavity_scan(taper, lam)
    gap = tmm.band_edges((taper.n_hi, taper.n_lo, taper.fill_factor, taper.a),
                         (lam.min(), lam.max()))
    summary = {"lambda_res_nm": lam_res, "q_est": q,
               "stop_band_nm": [float(gap[0]), float(gap[1])]}
    return ({"lambda_nm": grid, "T": t, "R": 1.0 - t}, summary,
            {"x": "lambda_nm", "y": ["T"], "log_y": True})


def _run_entangle(p, seed):
    ref = p["reference_zpl_fraction"] if p["reference_zpl_fraction"] is not None else p["dw"]
    return ({"beta": p["beta"], "reference_zpl_fraction": ref,
             "gain": cq.entanglement_gain(p["beta"], ref)}, {}, {"kind": "table"})


RUNNERS = {
    "purcell": _run_purcell,
    "tune_sweep": _run_tune_sweep,
    "rates": _run_rates,
    "infer": _run_infer,
    "g2": _run_g2,
    "odmr": _run_odmr,
    "rabi": _run_rabi,
    "echo": _run_echo,
    "fit": _run_fit,
    "tmm": _run_tmm,
    "entangle": _run_entangle,
}


def run_scenario(scenario, seed=None):
    """Execute ``scenario`` and return a :class:`ResultTable`.

    ``seed`` overrides the scenario's own seed. A fit that fails to
    converge raises :class:`NonConvergenceError` carrying the table.
    """
    seed = scenario.seed if seed is None else seed
    cols, summary, plot = RUNNERS[scenario.task](scenario.params, seed)
    metadata = {
        "tool": "nvcavity",
        "tool_version": __version__,
        "task": scenario.task,
        "seed": seed,
        "scenario": scenario.source,
        "plot": plot,
    }
    if summary:
        metadata["summary"] = summary
    table = ResultTable.from_columns(cols, metadata)
    if scenario.task == "fit" and not table.column("converged")[0]:
        raise NonConvergenceError("fit did not converge", result=table)
    return table
