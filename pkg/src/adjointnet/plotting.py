"""Deterministic SVG figures for training traces and solution fields.

Figures have a fixed size, no date metadata and a fixed SVG id salt, so
identical inputs give byte-identical files.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGSIZE = (6.0, 4.0)
_RC = {"svg.hashsalt": "adjointnet", "svg.fonttype": "path", "path.simplify": False}


def _save(fig, path):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with matplotlib.rc_context(_RC):
            fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    except OSError as exc:
        raise OSError(f"cannot write plot {path}: {exc}") from exc
    finally:
        plt.close(fig)
    return path


def _phase_lines(ax, trace):
    for b in trace.phase_boundaries[1:]:
        ax.axvline(b + 0.5, color="0.6", lw=0.8, ls=":")


def plot_loss(trace, path):
    if len(trace) == 0:
        raise ValueError("cannot plot an empty trace")
    fig, ax = plt.subplots(figsize=FIGSIZE)
    loss = np.maximum(trace.losses, np.finfo(float).tiny)
    ax.semilogy(trace.epochs, loss, marker="o" if len(trace) == 1 else None, lw=1.2)
    _phase_lines(ax, trace)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("Loss vs. epoch")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def plot_params(trace, path, truth=None, label="parameter"):
    if len(trace) == 0:
        raise ValueError("cannot plot an empty trace")
    fig, ax = plt.subplots(figsize=FIGSIZE)
    params = trace.params
    marker = "o" if len(trace) == 1 else None
    truth = None if truth is None else np.atleast_1d(truth)
    for j in range(params.shape[1]):
        line, = ax.plot(trace.epochs, params[:, j], marker=marker, lw=1.2, label=f"estimate {j}")
        if truth is not None:
            ax.axhline(truth[j], color=line.get_color(), ls="--", lw=0.8, label=f"truth {j}")
    if params.min() > 0 and params.max() / params.min() > 50:
        ax.set_yscale("log")
    _phase_lines(ax, trace)
    ax.set_xlabel("epoch")
    ax.set_ylabel(label)
    ax.set_title(f"{label} vs. epoch")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_profile(x, true_p, path, predicted=None, obs_x=None, obs_p=None):
    """Pressure profile along the 1D domain, in MPa."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(x, np.asarray(true_p) * 1e-6, color="k", lw=1.5, label="truth")
    if predicted is not None:
        ax.plot(x, np.asarray(predicted) * 1e-6, color="tab:red", ls="--", lw=1.2, label="predicted")
    if obs_x is not None:
        ax.plot(obs_x, np.asarray(obs_p) * 1e-6, "o", color="tab:blue", ms=4, label="observations")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("pressure [MPa]")
    ax.set_title("Pressure profile")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def plot_pressure_heatmap(x, y, p, path, u=None, v=None):
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    X, Y = np.meshgrid(x, y)
    cs = ax.contourf(X, Y, p, levels=20, cmap="viridis")
    fig.colorbar(cs, ax=ax, label="p")
    if u is not None:
        s = max(1, len(x) // 20)
        ax.quiver(X[::s, ::s], Y[::s, ::s], u[::s, ::s], v[::s, ::s], color="w", scale=10)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("Cavity pressure")
    ax.set_aspect("equal")
    return _save(fig, path)


def emit_plots(trace, fields, out_dir, truth=None, label="parameter"):
    """Write loss/parameter plots plus the field plot matching ``fields``.

    ``fields`` is a dict: ``{"kind": "darcy", "x", "true", "predicted", "obs_x", "obs_p"}``
    or ``{"kind": "cavity", "x", "y", "p", "u", "v"}``, or None.
    """
    out = Path(out_dir)
    written = []
    if trace is not None:
        written.append(plot_loss(trace, out / "loss.svg"))
        written.append(plot_params(trace, out / "params.svg", truth, label))
    if fields is not None:
        if fields["kind"] == "darcy":
            written.append(plot_profile(fields["x"], fields["true"], out / "profile.svg",
                                        fields.get("predicted"), fields.get("obs_x"),
                                        fields.get("obs_p")))
        else:
            written.append(plot_pressure_heatmap(fields["x"], fields["y"], fields["p"],
                                                 out / "pressure.svg", fields.get("u"),
                                                 fields.get("v")))
    return written
