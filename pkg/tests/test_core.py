import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afcmem.core import (
    DensityMatrix,
    MeasurementSetting,
    dumps_density_matrix,
    expectation,
    hermitian_eig,
    joint_projector,
    normalized_ratio,
    pauli,
    projector,
    read_density_matrix,
    sqrt_psd,
    tensor,
    write_density_matrix,
)
from afcmem.errors import InvalidStateError, ParameterError, ParseError
from afcmem.source import bell_phi_plus
from conftest import random_hermitian

S = MeasurementSetting.parse
ALL_SETTINGS = [S(t) for t in ("+x", "-x", "+y", "-y", "+z", "-z")]


class TestPauli:
    def test_definitions(self):
        assert np.array_equal(pauli("z"), np.diag([1, -1]))
        assert np.array_equal(pauli("x"), [[0, 1], [1, 0]])
        assert np.array_equal(pauli("y"), [[0, -1j], [1j, 0]])

    @pytest.mark.parametrize("axis", "xyz")
    def test_hermitian_unitary_traceless(self, axis):
        p = pauli(axis)
        assert np.allclose(p, p.conj().T)
        assert np.allclose(p @ p.conj().T, np.eye(2))
        assert abs(np.trace(p)) == 0

    def test_unknown_axis(self):
        with pytest.raises(ParameterError):
            pauli("w")


class TestSettings:
    def test_parse_and_str(self):
        assert S("+x") == MeasurementSetting("x", 1)
        assert S("-z") == MeasurementSetting("z", -1)
        assert S("y") == MeasurementSetting("y", 1)
        assert str(S("-y")) == "-y"
        assert -S("+z") == S("-z")

    @pytest.mark.parametrize("bad", ["", "+q", "xx", "++x"])
    def test_parse_rejects(self, bad):
        with pytest.raises(ParameterError):
            S(bad)

    def test_invalid_sign(self):
        with pytest.raises(ParameterError):
            MeasurementSetting("x", 0)


class TestProjector:
    def test_examples(self):
        assert np.allclose(projector(S("+z")), np.diag([1, 0]))
        assert np.allclose(projector(S("-z")), np.diag([0, 1]))
        assert np.allclose(projector(S("+x")), np.full((2, 2), 0.5))

    @pytest.mark.parametrize("s", ALL_SETTINGS, ids=str)
    def test_idempotent_complete(self, s):
        p = projector(s)
        assert np.max(np.abs(p @ p - p)) < 1e-12
        assert abs(np.trace(p) - 1) < 1e-12
        assert np.max(np.abs(p + projector(-s) - np.eye(2))) < 1e-12


class TestTensor:
    def test_examples(self):
        assert np.allclose(tensor(np.eye(2), np.eye(2)), np.eye(4))
        assert np.allclose(tensor(np.diag([1, 0]), np.diag([1, 0])), np.diag([1, 0, 0, 0]))
        phi = np.array([1, 0, 0, 1]) / np.sqrt(2)
        assert np.allclose(tensor(pauli("x"), pauli("x")) @ phi, phi)

    def test_mixed_product(self):
        rng = np.random.default_rng(1)
        a, b, c, d = (rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)) for _ in range(4))
        assert np.max(np.abs(tensor(a, b) @ tensor(c, d) - tensor(a @ c, b @ d))) < 1e-12


class TestExpectation:
    def test_examples(self):
        phi = bell_phi_plus()
        assert expectation(phi, joint_projector(S("+x"), S("+x"))) == pytest.approx(0.5, abs=1e-12)
        assert expectation(DensityMatrix.maximally_mixed(), joint_projector(S("+y"), S("-z"))) == pytest.approx(0.25)
        assert expectation(phi, joint_projector(S("+z"), S("-z"))) == pytest.approx(0.0, abs=1e-15)

    def test_rejects_non_hermitian(self):
        m = np.zeros((4, 4))
        m[0, 1] = 1
        with pytest.raises(InvalidStateError):
            expectation(bell_phi_plus(), m)

    def test_identity_and_linearity(self):
        rng = np.random.default_rng(2)
        rho = DensityMatrix.from_ket(rng.standard_normal(4) + 1j * rng.standard_normal(4))
        assert expectation(rho, np.eye(4)) == pytest.approx(1.0, abs=1e-12)
        a, b = random_hermitian(rng), random_hermitian(rng)
        lhs = expectation(rho, 2 * a - 3 * b)
        assert lhs == pytest.approx(2 * expectation(rho, a) - 3 * expectation(rho, b), abs=1e-12)


class TestHermitianEig:
    def test_diagonal(self):
        w, _ = hermitian_eig(np.diag([1.0, 3.0, 2.0, 4.0]))
        assert np.allclose(w, [4, 3, 2, 1])

    def test_bell_projector(self):
        w, _ = hermitian_eig(bell_phi_plus().mat)
        assert np.allclose(w, [1, 0, 0, 0], atol=1e-12)

    def test_characteristic_polynomial_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            h = random_hermitian(rng)
            w, _ = hermitian_eig(h)
            roots = np.sort(np.roots(np.poly(h)).real)[::-1]
            assert np.allclose(w, roots, atol=1e-8)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_reconstruction_and_invariants(self, seed):
        h = random_hermitian(np.random.default_rng(seed))
        w, v = hermitian_eig(h)
        assert np.linalg.norm(v @ np.diag(w) @ v.conj().T - h) < 1e-8
        assert np.all(np.diff(w) <= 0)
        assert abs(w.sum() - np.trace(h).real) < 1e-9
        assert abs(np.prod(w) - np.linalg.det(h).real) < 1e-8
        assert np.allclose(v.conj().T @ v, np.eye(4), atol=1e-10)

    def test_degenerate_spectrum(self):
        rng = np.random.default_rng(4)
        q = np.linalg.qr(rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))[0]
        h = q @ np.diag([2.0, 2.0, -1.0, -1.0]) @ q.conj().T
        w, v = hermitian_eig(h)
        assert np.allclose(w, [2, 2, -1, -1], atol=1e-10)
        assert np.linalg.norm(v @ np.diag(w) @ v.conj().T - h) < 1e-8

    def test_rejects_non_hermitian(self):
        with pytest.raises(InvalidStateError):
            hermitian_eig(np.triu(np.ones((4, 4))))


class TestSqrtPsd:
    def test_examples(self):
        assert np.allclose(sqrt_psd(np.eye(4)), np.eye(4))
        assert np.allclose(sqrt_psd(np.diag([4.0, 1, 0, 0])), np.diag([2.0, 1, 0, 0]))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_square_reproduces(self, seed, rank):
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((4, rank)) + 1j * rng.standard_normal((4, rank))
        a = g @ g.conj().T
        r = sqrt_psd(a)
        assert np.linalg.norm(r @ r - a) < 1e-8
        assert np.allclose(r, r.conj().T)
        assert np.linalg.eigvalsh(r).min() > -1e-9

    def test_small_negative_clamped(self):
        r = sqrt_psd(np.diag([1.0, -1e-9, 0, 0]))
        assert np.allclose(r, np.diag([1.0, 0, 0, 0]))

    def test_negative_rejected(self):
        with pytest.raises(InvalidStateError):
            sqrt_psd(np.diag([1.0, -1e-3, 0, 0]))


class TestDensityMatrix:
    def test_invariants_enforced(self):
        with pytest.raises(InvalidStateError):
            DensityMatrix(np.eye(4))  # trace 4
        with pytest.raises(InvalidStateError):
            DensityMatrix(np.diag([1.5, -0.5, 0, 0]))
        with pytest.raises(InvalidStateError):
            DensityMatrix(np.eye(2) / 2)
        bad = np.eye(4) / 4 + 0j
        bad[0, 1] = 0.1
        with pytest.raises(InvalidStateError):
            DensityMatrix(bad)

    def test_immutable(self):
        rho = bell_phi_plus()
        with pytest.raises(ValueError):
            rho.mat[0, 0] = 0

    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        rho = DensityMatrix.from_ket(rng.standard_normal(4) + 1j * rng.standard_normal(4))
        path = tmp_path / "rho.json"
        write_density_matrix(path, rho)
        back = read_density_matrix(path)
        assert np.array_equal(back.mat, rho.mat)
        rec = json.loads(dumps_density_matrix(rho))
        assert set(rec) == {"re", "im"}

    def test_reader_validates(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"re": np.eye(4).tolist(), "im": np.zeros((4, 4)).tolist()}))
        with pytest.raises(InvalidStateError):
            read_density_matrix(path)
        path.write_text('{"re": [1, 2]')
        with pytest.raises(ParseError):
            read_density_matrix(path)


class TestNormalizedRatio:
    def test_examples(self):
        assert normalized_ratio(900, 100) == 0.9
        assert normalized_ratio(3.0, 3.0) == 0.5
        assert normalized_ratio(0.0, 2.0) == 0.0
        assert normalized_ratio(2.0, 0.0) == 1.0

    @settings(max_examples=500, deadline=None)
    @given(st.floats(0, 1e12), st.floats(0, 1e12))
    def test_complements_sum_to_one_exactly(self, p, q):
        if p + q > 0:
            assert normalized_ratio(p, q) + normalized_ratio(q, p) == 1.0
            assert normalized_ratio(p, q) == pytest.approx(p / (p + q), rel=1e-15, abs=1e-300)
