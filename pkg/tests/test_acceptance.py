"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The lines are printed at the end of the run by the ``pytest_terminal_summary``
hook in ``conftest.py``.  Training-based criteria use the desk-scale
configs in ``configs/``.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from conftest import ACCEPTANCE, random_instance, random_params
from ilifnet import experiments as ex
from ilifnet.cli import main
from ilifnet.config import load_config
from ilifnet.data import SpikeBatch
from ilifnet.gradcheck import finite_difference_check, oracle_max_error
from ilifnet.metrics import E_AC_PJ, E_MAC_PJ, count_ac, count_mac, sop_energy
from ilifnet.network import LOSSES, SpikingNetwork, _one_hot, backward_network, evaluate, forward_sequence
from ilifnet.neuron import NeuronParams

GAMMAS = (0.5, 1.0, 2.0, 4.0)
TAPE_FIELDS = ("inputs", "current", "potential", "spikes", "m_bar", "m_post")
GRAD_FIELDS = ("weight_grads", "du_trace", "phi_trace")


def record(number, name, passed, detail):
    ACCEPTANCE[number] = (bool(passed), name, detail)
    print(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}")
    assert passed, detail


def spearman(x, y):
    # scipy returns 0.7999999999999999 for a rank correlation of exactly 0.8
    return round(float(spearmanr(x, y)[0]), 12)


CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def sweep():
    start = time.perf_counter()
    rows = ex.sweep_rows(load_config(CONFIGS / "sweep.ini"), GAMMAS)
    return rows, time.perf_counter() - start


def by_variant(rows, variant):
    return sorted((r for r in rows if r["variant"] == variant), key=lambda r: r["gamma"])


def test_01_reduction_identity():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(100):
        lif = random_params(rng, inhibitory=False)
        ilif = NeuronParams.ilif(lam=lif.lam, gamma=lif.gamma, lam_u=0.0, lam_i=0.0)
        net_a, batch = random_instance(rng, lif, T=int(rng.integers(1, 9)), excitatory=False)
        net_b = SpikingNetwork.build(net_a.layer_sizes, ilif, seed=0)
        for la, lb in zip(net_a.layers, net_b.layers):
            lb.weights[...] = la.weights
        out_a, tapes_a = forward_sequence(net_a, batch)
        out_b, tapes_b = forward_sequence(net_b, batch)
        ds = LOSSES["mse"](out_a, batch.labels)[1]
        ga, gb = backward_network(net_a, tapes_a, ds), backward_network(net_b, tapes_b, ds)
        same = np.array_equal(out_a, out_b)
        same &= all(np.array_equal(getattr(ta, f), getattr(tb, f))
                    for ta, tb in zip(tapes_a, tapes_b) for f in TAPE_FIELDS)
        same &= all(np.array_equal(x, y) for f in GRAD_FIELDS for x, y in zip(getattr(ga, f), getattr(gb, f)))
        same &= np.array_equal(ga.ds_in, gb.ds_in) and ga.decay_grads == gb.decay_grads
        mismatches += not same
    elapsed = time.perf_counter() - start
    record(1, "reduction identity", mismatches == 0 and elapsed < 10,
           f"{100 - mismatches}/100 bit-exact in {elapsed:.1f}s")


def test_02_oracle_equivalence():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst = {"LIF": 0.0, "ILIF": 0.0}
    count = {"LIF": 0, "ILIF": 0}
    for name, inhibitory in (("LIF", False), ("ILIF", True)):
        for gamma in (0.5, 1.0, 2.0):
            for _ in range(34):
                net, batch = random_instance(rng, random_params(rng, inhibitory, gamma=gamma), excitatory=False)
                worst[name] = max(worst[name], oracle_max_error(net, batch))
                count[name] += 1
    elapsed = time.perf_counter() - start
    passed = max(worst.values()) < 1e-10 and min(count.values()) >= 100 and elapsed < 60
    record(2, "gradient oracle equivalence", passed,
           f"LIF {count['LIF']} worst {worst['LIF']:.1e}, ILIF {count['ILIF']} worst {worst['ILIF']:.1e}, "
           f"{elapsed:.1f}s")


def test_03_twin_finite_difference():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    worst, checked = 0.0, 0
    for i in range(24):
        sizes = [int(rng.integers(2, 5)) for _ in range(int(rng.integers(3, 5)))]
        params = random_params(rng, inhibitory=bool(i % 2))
        net, batch = random_instance(rng, params, sizes=sizes, T=int(rng.integers(1, 5)), real_inputs=True)
        res = finite_difference_check(net, batch, detail=True)
        worst = max(worst, res.max_relative_error)
        checked += res.checked
    elapsed = time.perf_counter() - start
    record(3, "twin finite difference", worst < 1e-4 and elapsed < 60,
           f"max rel error {worst:.1e} over {checked} weights, {elapsed:.1f}s")


def test_04_complete_cutoff():
    res = ex.cutoff_checks()
    passed = res["lif_all_in_band"] and res["lif_temporal_terms_zero"] and res["ilif_spikes"] \
        and res["ilif_phi_nonzero_before_last_step"]
    record(4, "complete cutoff at gamma = v_th", passed,
           ", ".join(f"{k}={v}" for k, v in res.items() if k != "passed"))


def test_05_shortcut_without_attenuation():
    res = ex.shortcut_check()
    record(5, "shortcut attenuation", res["passed"], f"distinct products {res['products']}")


def test_06_output_sign_property():
    rng = np.random.default_rng(6)
    violating, entries = 0, 0
    n = 100
    for _ in range(n):
        net, batch = random_instance(rng, NeuronParams.ilif(), T=int(rng.integers(2, 9)), batch=4)
        out, tapes = forward_sequence(net, batch)
        ds = LOSSES["mse"](out, batch.labels)[1]
        phi = backward_network(net, tapes, ds).phi_trace[-1]
        target = _one_hot(batch.labels, out.shape[2])[None]
        wrong = ((target == 1) & (phi < 0)) | ((target == 0) & (phi > 0))
        violating += bool(np.any(wrong))
        entries += int(np.sum(wrong))
    record(6, "output-layer phi sign", violating == 0,
           f"{n - violating}/{n} instances sign-consistent, {entries} wrong-signed entries")


def test_07_gamma_trend(sweep):
    rows, elapsed = sweep
    lif = by_variant(rows, "LIF")
    g = [r["gamma"] for r in lif]
    rho_fr = spearman(g, [r["mean_firing_rate"] for r in lif])
    rho_wn = spearman(g, [r["mean_weight_norm"] for r in lif])
    record(7, "LIF gamma trend", rho_fr >= 0.8 and rho_wn >= 0.8 and elapsed < 900,
           f"spearman firing rate {rho_fr:.3f}, weight norm {rho_wn:.3f}, sweep {elapsed:.0f}s")


def test_08_inhibition_effect(sweep):
    rows, elapsed = sweep
    lif, ilif = by_variant(rows, "LIF"), by_variant(rows, "ILIF")
    rate_ok = all(b["mean_firing_rate"] <= a["mean_firing_rate"] for a, b in zip(lif, ilif))
    layers = [k for k in lif[0] if k.startswith("continuous_firing_rate_l")]
    cells = [b[k] <= a[k] for a, b in zip(lif, ilif) for k in layers]
    share = sum(cells) / len(cells)
    spread = {name: max(r["accuracy"] for r in rs) - min(r["accuracy"] for r in rs)
              for name, rs in (("LIF", lif), ("ILIF", ilif))}
    passed = rate_ok and share >= 0.75 and spread["ILIF"] <= spread["LIF"] and elapsed < 900
    record(8, "ILIF inhibition effect", passed,
           f"rate ILIF<=LIF at all gammas {rate_ok}, continuous firing {share:.0%} of layers, "
           f"accuracy spread ILIF {spread['ILIF']:.3f} vs LIF {spread['LIF']:.3f}")


def test_09_ablation_order():
    start = time.perf_counter()
    rows, none_is_lif = ex.ablation_rows(load_config(CONFIGS / "ablate.ini"))
    elapsed = time.perf_counter() - start
    acc = {r["cell"]: r["accuracy"] for r in rows}
    order = acc["both"] >= acc["mpiu-only"] >= acc["none"] and acc["both"] >= acc["ciu-only"] >= acc["none"]
    record(9, "ablation ordering", order and none_is_lif and elapsed < 1200,
           ", ".join(f"{k} {v:.3f}" for k, v in acc.items())
           + f", none equals LIF run {none_is_lif}, {elapsed:.0f}s")


def test_10_energy_model():
    rng = np.random.default_rng(10)
    ac_ok = True
    for _ in range(30):
        net, batch = random_instance(rng, random_params(rng, bool(rng.integers(2))), excitatory=False)
        _, tapes = forward_sequence(net, batch)
        sizes = net.layer_sizes
        expected = 0
        for l, tape in enumerate(tapes):
            for _spike in zip(*np.nonzero(tape.spikes)):
                if l + 2 < len(sizes):
                    expected += sizes[l + 2]
        ac_ok &= count_ac(tapes, sizes) == expected

    ratios = set()
    for sizes, T in (([784, 800, 10], 4), ([20, 64, 64, 2], 8), ([3, 5, 7, 2], 1)):
        ratios.add(count_mac(sizes, T, "snn-ilif") / count_mac(sizes, T, "snn-lif"))
    data = rng.random((5, 4, 6))
    macs = {}
    for name, params in (("LIF", NeuronParams.lif()), ("ILIF", NeuronParams.ilif())):
        net = SpikingNetwork.build([6, 5, 3], params, seed=0)
        macs[name] = evaluate(net, SpikeBatch(data, np.zeros(5, int), 3))[1].mac_count
    ratios.add(macs["ILIF"] / macs["LIF"])

    sop_ok = (E_AC_PJ, E_MAC_PJ) == (0.9, 4.6) and sop_energy(10, 0) == 0.9 * 10 \
        and sop_energy(0, 10) == 4.6 * 10 and sop_energy(3, 7) == 0.9 * 3 + 4.6 * 7
    record(10, "energy model", ac_ok and ratios == {2.0} and sop_ok,
           f"count_ac matches enumeration {ac_ok}, MAC ratios {sorted(ratios)}, sop arithmetic {sop_ok}")


SMALL = """
[architecture]
layers = 8, 6, 2
[training]
epochs = 2
batch_size = 16
[data]
source = rate-pair
n_samples = 60
features = 8
T = 4
"""


def snapshot(directory: Path) -> dict:
    return {p.relative_to(directory).as_posix(): p.read_bytes()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def test_11_determinism(tmp_path):
    cfg = tmp_path / "small.ini"
    cfg.write_text(SMALL)
    commands = {
        "train": [],
        "sweep-gamma": ["--gammas", "1,2"],
        "ablate": [],
        "gradcheck": [],
        "energy": ["--checkpoint", str(tmp_path / "ck" / "checkpoint.json")],
    }
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "ck")]) == 0
    results = {}
    for command, extra in commands.items():
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / command / rep
            code = main([command, "--config", str(cfg), "--out", str(out), "--seed", "1234", *extra])
            outs.append((code, snapshot(out)))
        (code_a, files_a), (code_b, files_b) = outs
        results[command] = code_a == code_b == 0 and bool(files_a) and files_a == files_b
    record(11, "determinism", all(results.values()),
           ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in results.items()))
