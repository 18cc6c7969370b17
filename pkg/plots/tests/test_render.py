import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
import render  # noqa: E402

HEADER = "steps,k,l2_error,observed_order,energy_violations,wallclock_s"


def write_convergence(path, rows):
    lines = [HEADER] + [",".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n")


def table6_shaped(path):
    errs = [1.06e-3, 3.11e-4, 8.58e-5, 2.27e-5, 5.85e-6]
    rows = []
    order = "nan"
    for i, (p, e) in enumerate(zip(range(3, 8), errs)):
        n = 2**p
        rows.append([n, 0.1 / n, e, order, 0, 0.01])
        order = 1.8
    write_convergence(path, rows)


def test_convergence_plot(tmp_path):
    csv = tmp_path / "run.csv"
    table6_shaped(csv)
    out = tmp_path / "fig.png"
    spec = render.PlotSpec(kind="convergence", inputs=[csv], output=out)
    render.plot(spec)
    assert out.exists() and out.stat().st_size > 0


def test_header_only_csv_gives_empty_axes(tmp_path):
    csv = tmp_path / "empty.csv"
    csv.write_text(HEADER + "\n")
    out = tmp_path / "fig.png"
    rc = render.main(["--kind", "convergence", "--in", str(csv), "--out", str(out)])
    assert rc == 0
    assert out.exists()


def test_schema_mismatch_rejected(tmp_path):
    csv = tmp_path / "bad.csv"
    csv.write_text("a,b,c\n1,2,3\n")
    out = tmp_path / "fig.png"
    with pytest.raises(render.SchemaError):
        render.plot(render.PlotSpec(kind="convergence", inputs=[csv], output=out))


def test_missing_input_rejected(tmp_path):
    with pytest.raises(render.SchemaError):
        render.PlotSpec(
            kind="convergence",
            inputs=[tmp_path / "nope.csv"],
            output=tmp_path / "f.png",
        )


def test_snapshot1d_two_curves(tmp_path):
    x = np.linspace(-10, 10, 65)
    for name, shift in (("initial", 20.0), ("final", -20.0)):
        data = np.column_stack([x, np.tanh(4 * x + shift)])
        np.savetxt(tmp_path / f"{name}.csv", data, delimiter=",", header="x,u",
                   comments="")
    out = tmp_path / "snap.png"
    rc = render.main(
        [
            "--kind", "snapshot1d",
            "--in", str(tmp_path / "initial.csv"),
            "--in", str(tmp_path / "final.csv"),
            "--out", str(out),
        ]
    )
    assert rc == 0 and out.exists()


def test_snapshot2d(tmp_path):
    grid = np.random.default_rng(0).random((32, 32))
    np.savetxt(tmp_path / "grid.csv", grid, delimiter=",")
    out = tmp_path / "grid.png"
    render.plot(
        render.PlotSpec(kind="snapshot2d", inputs=[tmp_path / "grid.csv"], output=out)
    )
    assert out.exists()


def test_energy_trace(tmp_path):
    tr = np.column_stack([np.arange(10), np.linspace(3.0, 1.0, 10)])
    np.savetxt(tmp_path / "tr.csv", tr, delimiter=",", header="step,energy",
               comments="")
    out = tmp_path / "tr.png"
    render.plot(
        render.PlotSpec(kind="energy-trace", inputs=[tmp_path / "tr.csv"], output=out)
    )
    assert out.exists()


def test_cli_as_script(tmp_path):
    csv = tmp_path / "run.csv"
    table6_shaped(csv)
    out = tmp_path / "fig.png"
    script = Path(__file__).resolve().parents[1] / "render.py"
    proc = subprocess.run(
        [sys.executable, str(script), "--kind", "convergence",
         "--in", str(csv), "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()


def test_renders_real_heat_wass_run(tmp_path):
    """Secondary criterion: figures from an actual heat_wass harness run."""
    gradflow = pytest.importorskip("gradflow")
    from gradflow.harness import RunConfig, converge

    out = tmp_path / "run"
    converge(
        RunConfig(
            problem="heat_wass",
            scheme="si2",
            steps=[8, 16],
            grid=129,
            oracle="exact",
            out=str(out),
        )
    )
    conv = out / "heat_wass_si2_convergence.csv"
    fig1 = tmp_path / "conv.png"
    fig2 = tmp_path / "snap.png"
    fig3 = tmp_path / "energy.png"
    assert render.main(["--kind", "convergence", "--in", str(conv), "--out", str(fig1)]) == 0
    assert render.main([
        "--kind", "snapshot1d",
        "--in", str(out / "heat_wass_si2_snapshot_initial.csv"),
        "--in", str(out / "heat_wass_si2_snapshot_final.csv"),
        "--out", str(fig2),
    ]) == 0
    assert render.main([
        "--kind", "energy-trace",
        "--in", str(out / "heat_wass_si2_energy_trace.csv"),
        "--out", str(fig3),
    ]) == 0
    assert fig1.exists() and fig2.exists() and fig3.exists()
