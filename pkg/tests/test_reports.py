import dataclasses
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from bgeva.data import SimulationConfig, SplitPlan, simulate, split
from bgeva.figures import link_curves, smooth_panels
from bgeva.fit import fit, predict
from bgeva.inference import smooth_ci, summarize
from bgeva.likelihood import parse_terms
from bgeva.links import LinkKind
from bgeva.metrics import evaluate
from bgeva.svgplot import render_svg
from bgeva.validation import model_label, time_plan, validate

GEV = LinkKind("gev", -0.25)
NS = {"s": "http://www.w3.org/2000/svg"}


@pytest.fixture(scope="module")
def sim():
    cfg = SimulationConfig(3000, GEV, linear=(1.0,), nonlinear=(("sine", 1.0),),
                           target_rate=0.15, seed=5)
    out = simulate(cfg)
    years = np.repeat(np.arange(2006, 2011), 600)
    return dataclasses.replace(out, data=dataclasses.replace(out.data, year=years))


@pytest.fixture(scope="module")
def model(sim):
    return fit(parse_terms(smooth=["x2"], linear=["x1"], k=10), sim.data, GEV)


def parse(svg):
    return ET.fromstring(svg.encode())


class TestSvg:
    def test_structure(self, model, sim):
        rug = sim.data.column("x2")
        root = parse(render_svg(smooth_ci(model, "x2"), rug=rug))
        assert len(root.findall("s:path[@class='curve']", NS)) == 1
        assert len(root.findall("s:polygon[@class='band']", NS)) == 1
        assert len(root.findall("s:line[@class='rug']", NS)) == sim.data.n

    def test_edf_label_matches_summary(self, model):
        root = parse(render_svg(smooth_ci(model, "x2")))
        label = root.find("s:text[@class='ylabel']", NS).text
        edf = next(s.edf for s in summarize(model).smooth if s.term == "x2")
        assert label == f"s(x2,{edf:.2f})"

    def test_zero_variance_band_is_the_curve(self, model):
        flat = dataclasses.replace(model, V=np.zeros_like(model.V))
        root = parse(render_svg(smooth_ci(flat, "x2", grid_size=30)))
        curve = root.find("s:path[@class='curve']", NS).get("d")
        pts = [tuple(p.split(",")) for p in curve[2:].split(" L ")]
        poly = [tuple(p.split(",")) for p in root.find("s:polygon", NS).get("points").split()]
        assert poly[:30] == pts and poly[30:] == pts[::-1]

    def test_no_rug(self, model):
        root = parse(render_svg(smooth_ci(model, "x2")))
        assert root.findall("s:line[@class='rug']", NS) == []


class TestValidation:
    def test_labels(self):
        assert model_label(GEV) == "BGEVA(tau=-0.25)"
        assert model_label(LinkKind("logit")) == "logistic"
        assert time_plan([2006, 2007, 2008], [2009, 2010]).label == "Two years: 2009-2010"
        assert time_plan([2006], [2009]).label == "Out-of-time 2009"

    def test_table_shape_and_library_parity(self, sim, model):
        logit = fit(model.terms, sim.data, LinkKind("logit"))
        loglog = fit(model.terms, sim.data, LinkKind("loglog"))
        plans = [SplitPlan.holdout(0.2, 1), time_plan([2006, 2007, 2008], [2009, 2010])]
        rep = validate([model, loglog, logit], sim.data, plans)
        assert rep.models == ["BGEVA(tau=-0.25)", "log-log", "logistic"]
        assert len(rep.rows) == 6
        text = rep.format()
        assert "Out-of-sample" in text and "Two years: 2009-2010" in text
        # one 4-measure block per split
        assert text.count("MAE+") == 2 and text.count("AUC") == 2
        # direct library route on the same split
        train, test = split(sim.data, plans[1])
        direct = evaluate(test.response, predict(fit(logit.terms, train, logit.link), test), 0.01)
        for key in ("mae_plus", "mse_plus", "h_measure", "auc"):
            assert rep.value("Two years: 2009-2010", "logistic", key) == getattr(direct, key)
        lines = rep.jsonl().splitlines()
        assert json.loads(lines[0])["record"] == "config" and len(lines) == 7

    def test_no_refit_scores_stored_model(self, sim, model):
        plan = SplitPlan.holdout(0.2, 2)
        rep = validate([model], sim.data, [plan], refit=False)
        _, test = split(sim.data, plan)
        assert rep.value("Out-of-sample", "BGEVA(tau=-0.25)", "auc") == evaluate(
            test.response, predict(model, test), 0.01).auc

    def test_duplicate_labels_disambiguated(self, sim, model):
        rep = validate([model, model], sim.data, [SplitPlan.holdout(0.2, 1)], refit=False)
        assert rep.models == ["BGEVA(tau=-0.25)#1", "BGEVA(tau=-0.25)#2"]


class TestFigures:
    def test_png_files(self, model, sim, tmp_path):
        out = smooth_panels(model, tmp_path / "s.png", sim.data)
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        assert link_curves(tmp_path / "l.png").stat().st_size > 0

    def test_no_smooths(self, sim, tmp_path):
        m = fit(parse_terms(linear=["x1"]), sim.data, GEV)
        assert smooth_panels(m, tmp_path / "n.png") is None
