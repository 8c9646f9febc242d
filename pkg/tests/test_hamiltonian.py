"""Hamiltonian matrix elements checked against an independent Kronecker-product
construction of Pauli/spin operators (a different algorithm on purpose)."""

import warnings
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanvmc.hamiltonian import (
    BiasField,
    ahm,
    build_sector_matrix,
    connections,
    j1j2,
    msr_sign,
    tfim,
    with_bias,
)
from kanvmc.spins import SpinConfiguration, enumerate_sector

# local basis ordering (|down>, |up>), matching bit 0 = down, bit 1 = up
I2 = np.eye(2)
SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SY = np.array([[0.0, 1.0j], [-1.0j, 0.0]])
SZ = np.array([[-1.0, 0.0], [0.0, 1.0]])


def op_at(single, site, L):
    mats = [I2] * L
    mats[site] = single
    # bit i of the basis index carries site i, so site L-1 is the leading factor
    return reduce(np.kron, [mats[s] for s in reversed(range(L))])


def kron_tfim(L, J, h):
    H = np.zeros((2**L, 2**L), dtype=complex)
    for i in range(L):
        H -= J * op_at(SZ, i, L) @ op_at(SZ, (i + 1) % L, L)
        H -= h * op_at(SX, i, L)
    return H.real


def kron_spin_pair(L, i, j):
    """S_i . S_j with spin-1/2 operators S = sigma/2."""
    out = np.zeros((2**L, 2**L), dtype=complex)
    for P in (SX, SY, SZ):
        out += 0.25 * op_at(P, i, L) @ op_at(P, j, L)
    return out


def kron_ahm(L, gamma):
    H = np.zeros((2**L, 2**L), dtype=complex)
    for i in range(L):
        j = (i + 1) % L
        H += (1 + gamma) * 0.25 * op_at(SZ, i, L) @ op_at(SZ, j, L)
        H += (1 - gamma) * 0.25 * (
            op_at(SX, i, L) @ op_at(SX, j, L) + op_at(SY, i, L) @ op_at(SY, j, L)
        )
    return H.real


def kron_j1j2(L, J1, J2):
    H = np.zeros((2**L, 2**L), dtype=complex)
    for i in range(L):
        H += J1 * kron_spin_pair(L, i, (i + 1) % L)
        H += J2 * kron_spin_pair(L, i, (i + 2) % L)
    return H.real


def msr_rotation(L):
    signs = np.array(
        [msr_sign(SpinConfiguration(c, L)) for c in range(2**L)], dtype=float
    )
    return np.diag(signs)


def full_matrix(model):
    basis = enumerate_sector(model.L, False)
    return build_sector_matrix(model, basis, format="dense")


class TestAgainstKronOracle:
    def test_tfim(self):
        assert np.allclose(full_matrix(tfim(6, J=1.0, h=0.7)), kron_tfim(6, 1.0, 0.7), atol=1e-12)

    def test_ahm(self):
        assert np.allclose(full_matrix(ahm(6, gamma=0.3)), kron_ahm(6, 0.3), atol=1e-12)

    def test_j1j2(self):
        assert np.allclose(
            full_matrix(j1j2(6, J1=1.0, J2=0.4)), kron_j1j2(6, 1.0, 0.4), atol=1e-12
        )

    def test_staggered_bias(self):
        L, h = 6, 0.37
        model = ahm(L, gamma=0.5, bias=BiasField("staggered_z", h))
        expect = kron_ahm(L, 0.5)
        for i in range(L):
            expect -= h * (-1) ** i * 0.5 * op_at(SZ, i, L)
        assert np.allclose(full_matrix(model), expect, atol=1e-12)

    def test_uniform_x_bias(self):
        L, h = 6, 0.25
        model = ahm(L, gamma=0.95, bias=BiasField("uniform_x", h))
        expect = kron_ahm(L, 0.95) - h * 0.5 * sum(op_at(SX, i, L) for i in range(L))
        assert np.allclose(full_matrix(model), expect.real, atol=1e-12)

    def test_uniform_z_bias(self):
        L, h = 4, 0.4
        model = ahm(L, gamma=0.2, bias=BiasField("uniform_z", h))
        expect = kron_ahm(L, 0.2) - h * 0.5 * sum(op_at(SZ, i, L) for i in range(L))
        assert np.allclose(full_matrix(model), expect.real, atol=1e-12)

    def test_msr_is_exact_rotation(self):
        for model, bare in [
            (tfim(6, J=1.0, h=0.9, msr=True), kron_tfim(6, 1.0, 0.9)),
            (ahm(6, gamma=0.2, msr=True), kron_ahm(6, 0.2)),
            (j1j2(6, J1=1.0, J2=0.3, msr=True), kron_j1j2(6, 1.0, 0.3)),
        ]:
            R = msr_rotation(6)
            assert np.allclose(full_matrix(model), R @ bare @ R, atol=1e-12)

    def test_uniform_x_bias_stays_unrotated_under_msr(self):
        # the pinning field is applied in the computational frame on purpose
        L, h = 4, 0.3
        model = ahm(L, gamma=0.95, msr=True, bias=BiasField("uniform_x", h))
        R = msr_rotation(L)
        expect = R @ kron_ahm(L, 0.95) @ R - h * 0.5 * sum(op_at(SX, i, L) for i in range(L))
        assert np.allclose(full_matrix(model), expect.real, atol=1e-12)


class TestConnections:
    def test_tfim_aligned_no_offdiagonal(self):
        c = SpinConfiguration.from_string("uuuu")
        cs = connections(tfim(4, J=1.0, h=0.0), c)
        assert cs.diagonal == -4.0
        assert cs.off_diagonal == []
        assert cs.entries[0][0] == c

    def test_heisenberg_bond_sign(self):
        c = SpinConfiguration.from_string("uduu")
        amps_on = [a for _, a in connections(j1j2(4, 1.0, 0.0, msr=True), c).off_diagonal]
        amps_off = [a for _, a in connections(j1j2(4, 1.0, 0.0, msr=False), c).off_diagonal]
        assert amps_on and all(a == -0.5 for a in amps_on)
        assert amps_off and all(a == 0.5 for a in amps_off)

    def test_ahm_gamma0_equals_j1j2(self):
        basis = enumerate_sector(6, False)
        ma, mj = ahm(6, gamma=0.0), j1j2(6, J1=1.0, J2=0.0)
        for code in basis.codes[:: basis.size // 16]:
            c = SpinConfiguration(int(code), 6)
            ca, cj = connections(ma, c), connections(mj, c)
            assert [(e[0].code, e[1]) for e in ca.entries] == [
                (e[0].code, e[1]) for e in cj.entries
            ]
        assert np.array_equal(full_matrix(ma), full_matrix(mj))

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            connections(tfim(6, 1.0, 1.0), SpinConfiguration.from_string("uuuu"))

    @settings(max_examples=40, deadline=None, derandomize=True)
    @given(st.integers(min_value=0, max_value=2**8 - 1))
    def test_entry_count_and_locality(self, code):
        L = 8
        c = SpinConfiguration(code, L)
        cs = connections(j1j2(L, 1.0, 0.5, msr=True), c)
        assert len(cs.entries) <= 1 + 2 * L
        assert cs.entries[0][0] == c
        for target, _ in cs.off_diagonal:
            assert (target.bits != c.bits).sum() == 2
            assert target.magnetization() == c.magnetization()


class TestSectorMatrix:
    def test_l4_heisenberg_ground_energy(self):
        # independent dense diagonalization of the 16x16 kron matrix
        oracle = np.linalg.eigvalsh(kron_j1j2(4, 1.0, 0.0))
        ours = np.linalg.eigvalsh(full_matrix(j1j2(4, 1.0, 0.0)))
        assert abs(oracle[0] - (-2.0)) < 1e-12
        assert np.allclose(ours, oracle, atol=1e-10)

    def test_exactly_symmetric(self):
        for model in (tfim(6, 1.0, 0.8, msr=True), j1j2(6, 1.0, 0.4, msr=True)):
            h = full_matrix(model)
            assert np.array_equal(h, h.T)
        basis = enumerate_sector(8, True)
        h = build_sector_matrix(j1j2(8, 1.0, 0.5, msr=True), basis, format="dense")
        assert np.array_equal(h, h.T)

    def test_msr_spectrum_invariance(self):
        basis = enumerate_sector(8, True)
        for J2 in (0.0, 0.5):
            e_on = np.linalg.eigvalsh(build_sector_matrix(j1j2(8, 1.0, J2, msr=True), basis))
            e_off = np.linalg.eigvalsh(build_sector_matrix(j1j2(8, 1.0, J2, msr=False), basis))
            assert np.allclose(e_on, e_off, atol=1e-10)
        e_on = np.linalg.eigvalsh(full_matrix(tfim(8, 1.0, 1.0, msr=True)))
        e_off = np.linalg.eigvalsh(full_matrix(tfim(8, 1.0, 1.0, msr=False)))
        assert np.allclose(e_on, e_off, atol=1e-10)

    def test_msr_nonpositive_offdiagonals(self):
        basis = enumerate_sector(8, True)
        for model in (j1j2(8, 1.0, 0.0, msr=True), ahm(8, gamma=-0.5, msr=True), ahm(8, 0.0, msr=True)):
            h = build_sector_matrix(model, basis, format="dense")
            off = h - np.diag(np.diag(h))
            assert np.all(off <= 0)

    def test_mg_point_energy_and_degeneracy(self):
        for L in (8, 12):
            basis = enumerate_sector(L, True)
            h = build_sector_matrix(j1j2(L, 1.0, 0.5, msr=True), basis, format="dense")
            evals = np.linalg.eigvalsh(h)
            assert abs(evals[0] - (-3 * L / 8)) < 1e-10
            assert evals[1] - evals[0] < 1e-8
            assert evals[2] - evals[0] > 1e-8

    def test_sparse_dense_agree(self):
        basis = enumerate_sector(8, True)
        model = j1j2(8, 1.0, 0.5, msr=True)
        dense = build_sector_matrix(model, basis, format="dense")
        sparse = build_sector_matrix(model, basis, format="sparse")
        assert np.allclose(sparse.toarray(), dense, atol=0)

    def test_sector_not_closed(self):
        basis = enumerate_sector(6, True)
        with pytest.raises(ValueError):
            build_sector_matrix(tfim(6, 1.0, 1.0), basis)
        with pytest.raises(ValueError):
            build_sector_matrix(ahm(6, 0.95, bias=BiasField("uniform_x", 0.5)), basis)

    def test_staggered_bias_lifts_neel_degeneracy(self):
        basis = enumerate_sector(8, True)
        bare = ahm(8, gamma=0.8, msr=True)
        evals0 = np.linalg.eigvalsh(build_sector_matrix(bare, basis))
        evals1 = np.linalg.eigvalsh(build_sector_matrix(with_bias(bare, 0.5), basis))
        assert evals1[1] - evals1[0] > 10 * (evals0[1] - evals0[0])


class TestMsrSignAndBias:
    def test_msr_sign_examples(self):
        assert msr_sign(SpinConfiguration.from_string("udud")) == 1
        assert msr_sign(SpinConfiguration.from_string("uudd")) == -1
        assert msr_sign(SpinConfiguration.from_string("dddd")) == 1

    def test_with_bias_axis_policy(self):
        assert with_bias(ahm(8, 0.5), 0.7).bias.axis == "staggered_z"
        assert with_bias(ahm(8, 0.9), 1.1).bias.axis == "uniform_x"
        assert with_bias(ahm(8, 0.5), 0.0).bias.axis == "none"

    def test_with_bias_errors(self):
        with pytest.raises(ValueError):
            with_bias(ahm(8, 0.5), -0.1)
        with pytest.raises(ValueError):
            with_bias(tfim(8, 1.0, 1.0), 0.5)

    def test_zero_bias_spectrum_unchanged(self):
        basis = enumerate_sector(6, True)
        bare = ahm(6, gamma=0.5, msr=True)
        a = np.linalg.eigvalsh(build_sector_matrix(bare, basis))
        b = np.linalg.eigvalsh(build_sector_matrix(with_bias(bare, 0.0), basis))
        assert np.allclose(a, b, atol=0)

    def test_l2_warning(self):
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            tfim(2, 1.0, 0.5)
        assert any("L=2" in str(x.message) for x in w)
