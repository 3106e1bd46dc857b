import io
import json

import numpy as np
import pytest

from qotl.cli import EXIT_HOLDS, EXIT_INPUT, EXIT_REFUTED, EXIT_UNKNOWN, main
from qotl.io import ivp_to_json, matrix_to_json
from qotl.linalg import ket, p_asym, proj
from qotl.logic import Derivation, derivation_to_json, random_derivation
from qotl.predicates import ivp_new
from qotl.qwhile import Skip

from randomgen import qubit_env, rand_density

KET0, KET1 = proj(ket(0, 2)), proj(ket(1, 2))


def run(argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], stdout=out)
    return code, out.getvalue()


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def files(tmp_path):
    env = qubit_env(("q",))
    split = {
        "env": env.to_json(),
        "prog1": "skip",
        "prog2": "skip",
        "pre": ivp_to_json(ivp_new(2 * np.eye(4))),
        "post": ivp_to_json(ivp_new(np.kron(KET0, np.eye(2)) + np.kron(np.eye(2), KET1))),
        "q1": matrix_to_json(KET0),
        "q2": matrix_to_json(KET1),
    }
    f = {
        "split": write_json(tmp_path / "split.json", split),
        "env": write_json(tmp_path / "env.json", env.to_json()),
        "xx": tmp_path / "xx.qw",
        "skip": tmp_path / "skip.qw",
        "x": tmp_path / "x.qw",
        "reset": tmp_path / "reset.qw",
        "rho0": write_json(tmp_path / "rho0.json", matrix_to_json(KET0)),
        "rho1": write_json(tmp_path / "rho1.json", matrix_to_json(KET1)),
        "asym": write_json(tmp_path / "asym.json", matrix_to_json(p_asym(2))),
    }
    f["xx"].write_text("[q] *= U(X);\n[q] *= U(X)\n")
    f["skip"].write_text("skip\n")
    f["x"].write_text("[q] *= U(X)\n")
    f["reset"].write_text("q := |0>\n")
    return f


class TestGoldens:
    def test_split_judgment_holds(self, files):
        code, text = run(["check-split", "--judgment", files["split"]])
        assert code == EXIT_HOLDS
        rep = json.loads(text)
        assert rep["status"] == "valid" and rep["exit_code"] == 0
        assert rep["result"]["verdict"]["status"] == "valid"

    def test_split_judgment_refuted(self, files, tmp_path):
        obj = json.loads(files["split"].read_text())
        obj["pre"] = ivp_to_json(ivp_new(0.5 * np.eye(4)))
        code, text = run(["check-split", "--judgment", write_json(tmp_path / "bad.json", obj)])
        assert code == EXIT_REFUTED
        assert json.loads(text)["result"]["verdict"]["counterexample"] is not None

    def test_split_inferred_from_post(self, files, tmp_path):
        obj = json.loads(files["split"].read_text())
        del obj["q1"], obj["q2"]
        code, _ = run(["check-split", "--judgment", write_json(tmp_path / "j.json", obj)])
        assert code == EXIT_HOLDS

    def test_equiv_xx_skip(self, files):
        code, text = run(["equiv", "--p1", files["xx"], "--p2", files["skip"]])
        assert code == EXIT_HOLDS
        assert json.loads(text)["result"]["equal"] is True

    def test_equiv_x_skip(self, files):
        code, text = run(["equiv", "--p1", files["x"], "--p2", files["skip"], "--no-certify"])
        assert code == EXIT_REFUTED
        assert json.loads(text)["result"]["equal"] is False

    def test_dp_identity_refuted(self, files):
        code, text = run(["dp", "--prog", files["skip"], "--env", files["env"], "--eps", 0, "--delta", 0])
        assert code == EXIT_REFUTED
        np.testing.assert_allclose(json.loads(text)["result"]["verdict"]["margin"], 1.0, atol=1e-6)

    def test_dp_reset_holds(self, files):
        code, _ = run(["dp", "--prog", files["reset"], "--eps", 0, "--delta", 0])
        assert code == EXIT_HOLDS

    def test_transport(self, files):
        code, text = run(["transport", "--rho1", files["rho0"], "--rho2", files["rho1"], "--cost", files["asym"]])
        assert code == EXIT_HOLDS
        # orthogonal pure states: (1 - |<0|1>|^2) / 2
        np.testing.assert_allclose(json.loads(text)["result"]["value"], 0.5, atol=1e-7)

    def test_lift_refuted_with_certificate(self, files):
        code, text = run(["lift", "--rho1", files["rho0"], "--rho2", files["rho1"], "--cost", files["asym"], "--eps", 0])
        assert code == EXIT_REFUTED
        assert json.loads(text)["result"]["certificate"] is not None

    def test_lift_holds(self, files):
        code, _ = run(["lift", "--rho1", files["rho0"], "--rho2", files["rho1"], "--cost", files["asym"], "--eps", 0.5])
        assert code == EXIT_HOLDS

    def test_diamond(self, files):
        code, text = run(["diamond", "--p1", files["x"], "--p2", files["skip"], "--bound", 1.5])
        assert code == EXIT_REFUTED
        np.testing.assert_allclose(json.loads(text)["result"]["value"], 2.0, atol=1e-6)

    def test_ast(self, files, tmp_path):
        assert run(["ast-check", "--prog", files["reset"]])[0] == EXIT_HOLDS
        loop = tmp_path / "loop.qw"
        loop.write_text("while M(m01)[q] == 1 do { skip } od\n")
        assert run(["ast-check", "--prog", loop])[0] == EXIT_REFUTED

    def test_trace_distance_states(self, files):
        code, text = run(["trace-distance", "--rho", files["rho0"], "--sigma", files["rho1"]])
        assert code == EXIT_HOLDS
        assert json.loads(text)["result"]["trace_distance"] == pytest.approx(1.0)

    def test_trace_distance_programs(self, files):
        code, _ = run(["trace-distance", "--p1", files["x"], "--p2", files["skip"], "--restarts", 4])
        assert code == EXIT_REFUTED

    def test_wasserstein(self, files):
        code, _ = run(["wasserstein", "--p1", files["x"], "--p2", files["skip"], "--lam", 1, "--budget", 4, "--restarts", 4])
        assert code == EXIT_REFUTED

    def test_derive_check(self, tmp_path):
        env = qubit_env(("q", "r"))
        d = random_derivation(env, np.random.default_rng(0), 3, ["q"], ["r"])
        obj = {"env": env.to_json(), "vars1": ["q"], "vars2": ["r"], "root": derivation_to_json(d)}
        code, text = run(["derive-check", "--derivation", write_json(tmp_path / "d.json", obj)])
        assert code == EXIT_HOLDS
        assert json.loads(text)["result"]["derivation"]["ok"]

    def test_derive_check_failure(self, files, tmp_path):
        # without vars1/vars2 both sides range over every variable
        d = Derivation("skip", Skip(), Skip(), np.eye(4), 2 * np.eye(4))
        path = write_json(tmp_path / "d.json", derivation_to_json(d))
        code, text = run(["derive-check", "--derivation", path, "--env", files["env"]])
        assert code == EXIT_REFUTED
        (f,) = json.loads(text)["result"]["derivation"]["failures"]
        assert f["path"] == "root" and "vector" in f

    def test_noninterference(self, tmp_path):
        env = qubit_env(("a", "b"))
        z1 = [matrix_to_json(np.kron(np.eye(2), KET0)), matrix_to_json(np.kron(np.eye(2), KET1))]
        system = {"agents": ["hi", "lo"], "commands": ["flip"], "do": {"hi:flip": "[b] *= U(X)"}, "measure": {"lo": [z1]}}
        args = ["noninterference", "--env", write_json(tmp_path / "env.json", env.to_json()),
                "--system", write_json(tmp_path / "sys.json", system), "--g1", "hi", "--g2", "lo"]
        assert run(args + ["--commands", "flip"])[0] == EXIT_REFUTED
        assert run(args)[0] == EXIT_HOLDS


class TestInputErrors:
    def test_missing_file(self, tmp_path):
        code, text = run(["check-split", "--judgment", tmp_path / "nope.json"])
        assert code == EXIT_INPUT
        assert json.loads(text)["status"] == "error"

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        code, text = run(["check", "--judgment", path])
        assert code == EXIT_INPUT
        assert "bad.json:1:2" in json.loads(text)["error"]

    def test_parse_error_position(self, files, tmp_path):
        bad = tmp_path / "bad.qw"
        bad.write_text("skip;\n[q] *= U(NOPE)\n")
        code, text = run(["equiv", "--p1", bad, "--p2", files["skip"], "--env", files["env"]])
        assert code == EXIT_INPUT
        assert ":2:" in json.loads(text)["error"]

    def test_bad_arguments(self):
        assert run(["equiv"])[0] == EXIT_INPUT
        assert run(["no-such-command"])[0] == EXIT_INPUT

    def test_trace_mismatch(self, files, tmp_path):
        half = write_json(tmp_path / "half.json", matrix_to_json(KET0 / 2))
        code, _ = run(["lift", "--rho1", files["rho0"], "--rho2", half, "--cost", files["asym"]])
        assert code == EXIT_INPUT

    def test_bad_eps(self, files):
        code, _ = run(["lift", "--rho1", files["rho0"], "--rho2", files["rho1"], "--cost", files["asym"], "--eps", "lots"])
        assert code == EXIT_INPUT

    def test_solver_failure_is_unknown(self, tmp_path):
        rng = np.random.default_rng(0)
        a = write_json(tmp_path / "a.json", matrix_to_json(rand_density(2, rng)))
        b = write_json(tmp_path / "b.json", matrix_to_json(rand_density(2, rng)))
        cost = write_json(tmp_path / "c.json", matrix_to_json(p_asym(2)))
        code, text = run(["transport", "--rho1", a, "--rho2", b, "--cost", cost, "--max-iter", 2])
        assert code == EXIT_UNKNOWN
        assert "solver failure" in json.loads(text)["error"]


class TestOutput:
    def test_byte_identical_reruns(self, files):
        argv = ["check", "--judgment", files["split"], "--restarts", 4, "--seed", 3]
        assert run(argv) == run(argv)
        argv = ["equiv", "--p1", files["x"], "--p2", files["skip"]]
        assert run(argv) == run(argv)

    def test_out_file(self, files, tmp_path):
        target = tmp_path / "report.json"
        code, text = run(["check-split", "--judgment", files["split"], "--out", target])
        assert code == EXIT_HOLDS and text == ""
        assert json.loads(target.read_text())["exit_code"] == 0

    def test_text_format(self, files):
        code, text = run(["check-split", "--judgment", files["split"], "--format", "text"])
        assert code == EXIT_HOLDS
        assert text.startswith("command: check-split\nstatus: valid\n")
        assert "tolerances:" in text

    def test_dump_sdp(self, files, tmp_path):
        target = tmp_path / "dump.sdp"
        run(["transport", "--rho1", files["rho0"], "--rho2", files["rho1"], "--cost", files["asym"], "--dump-sdp", target])
        assert target.read_text().startswith("blocks ")
