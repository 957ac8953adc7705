"""Renderer tests against fixture CSVs written in the harness schemas."""

import numpy as np
import pytest

from margin_lab_plots import FigureSpec, SchemaError, render
from margin_lab_plots.cli import main as cli_main


def write_margin_report(path, seed=0, n=60, shift=0.0):
    rng = np.random.default_rng(seed)
    lines = ["example_index,raw_margin,frob_margin,spectral_margin,correct,clean"]
    for i in range(n):
        raw = rng.normal(1.0 + shift, 0.3)
        lines.append(f"{i},{float(raw)!r},{float(raw)!r},{float(raw / 300.0)!r},"
                     f"{int(raw > 0)},{int(i % 5 != 0)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_sweep_curve(path):
    rows = [
        "sub_experiment,grid_value,normalized_abscissa,test_acc_mean,test_acc_sem,trials",
        "normalized-margin,0.01,0.01,0.62,0.01,3",
        "normalized-margin,0.1,0.1,0.78,0.008,3",
        "normalized-margin,1.0,1.0,0.87,0.005,3",
        "normalized-margin,10.0,10.0,0.88,0.004,3",
    ]
    path.write_text("\n".join(rows) + "\n")
    return path


def write_twin_summary(path):
    rows = [
        "width,pairs,sampled_acc_mean,sampled_acc_sem,trained_acc_mean,"
        "trained_acc_sem,worst_rel_margin_err,significant_gap",
        "64,100,0.942,0.004,0.951,0.004,2.1e-06,0",
        "256,100,0.957,0.003,0.971,0.003,3.0e-06,1",
        "1024,100,0.964,0.003,0.979,0.002,1.5e-06,1",
    ]
    path.write_text("\n".join(rows) + "\n")
    return path


def write_ensemble_grid(path):
    lines = ["mode,margin,m,acc_mean,acc_sem,trials"]
    for margin in (0.001, 0.01, 0.1, 1.0, 10.0):
        for m in (1, 10, 100):
            acc = 0.5 + 0.42 / (1.0 + (0.3 / (margin * np.sqrt(m))))
            lines.append(f"gp,{margin},{m},{float(acc)!r},0.002,20")
    path.write_text("\n".join(lines) + "\n")
    return path


class TestAllKindsRender:
    def test_margin_hist(self, tmp_path):
        a = write_margin_report(tmp_path / "a.csv", seed=1)
        b = write_margin_report(tmp_path / "b.csv", seed=2, shift=0.5)
        out = render(FigureSpec(kind="margin-hist", inputs=(str(a), str(b)),
                                output=str(tmp_path / "hist.png"),
                                labels=("control", "attack")))
        assert out.exists() and out.stat().st_size > 1000

    def test_margin_cdf(self, tmp_path):
        a = write_margin_report(tmp_path / "a.csv", seed=3)
        b = write_margin_report(tmp_path / "b.csv", seed=4, shift=-0.3)
        out = render(FigureSpec(kind="margin-cdf", inputs=(str(a), str(b)),
                                output=str(tmp_path / "cdf.png"),
                                column="spectral_margin", margin_filter="correct"))
        assert out.exists()

    def test_sweep_curve(self, tmp_path):
        src = write_sweep_curve(tmp_path / "curve.csv")
        out = render(FigureSpec(kind="sweep-curve", inputs=(str(src),),
                                output=str(tmp_path / "sweep.png")))
        assert out.exists()

    def test_width_errorbar(self, tmp_path):
        src = write_twin_summary(tmp_path / "twin.csv")
        out = render(FigureSpec(kind="width-errorbar", inputs=(str(src),),
                                output=str(tmp_path / "width.png")))
        assert out.exists()

    def test_ensemble_grid(self, tmp_path):
        src = write_ensemble_grid(tmp_path / "grid.csv")
        out = render(FigureSpec(kind="ensemble-grid", inputs=(str(src),),
                                output=str(tmp_path / "grid.png")))
        assert out.exists()


class TestDeterminismAndValidation:
    def test_rerender_identical_bytes(self, tmp_path):
        src = write_ensemble_grid(tmp_path / "grid.csv")
        spec1 = FigureSpec(kind="ensemble-grid", inputs=(str(src),),
                           output=str(tmp_path / "one.png"))
        spec2 = FigureSpec(kind="ensemble-grid", inputs=(str(src),),
                           output=str(tmp_path / "two.png"))
        render(spec1)
        render(spec2)
        assert (tmp_path / "one.png").read_bytes() == \
               (tmp_path / "two.png").read_bytes()

    def test_inputs_not_mutated(self, tmp_path):
        src = write_sweep_curve(tmp_path / "curve.csv")
        before = src.read_bytes()
        render(FigureSpec(kind="sweep-curve", inputs=(str(src),),
                          output=str(tmp_path / "out.png")))
        assert src.read_bytes() == before

    def test_schema_mismatch_lists_missing_columns(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("margin,m\n0.1,1\n")
        with pytest.raises(SchemaError, match="acc_mean"):
            render(FigureSpec(kind="ensemble-grid", inputs=(str(bad),),
                              output=str(tmp_path / "x.png")))

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="unknown figure kind"):
            FigureSpec(kind="pie", inputs=("a.csv",), output="x.png")

    def test_missing_input_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            render(FigureSpec(kind="sweep-curve",
                              inputs=(str(tmp_path / "nope.csv"),),
                              output=str(tmp_path / "x.png")))


class TestCli:
    def test_cli_renders(self, tmp_path, capsys):
        src = write_ensemble_grid(tmp_path / "grid.csv")
        out = tmp_path / "fig.png"
        code = cli_main(["ensemble-grid", "--in", str(src), "--out", str(out)])
        assert code == 0 and out.exists()

    def test_cli_reports_schema_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        code = cli_main(["sweep-curve", "--in", str(bad),
                         "--out", str(tmp_path / "x.png")])
        assert code == 1
        assert "missing required columns" in capsys.readouterr().err
