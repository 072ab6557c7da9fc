"""Phantom generation, the spin-echo signal model and image synthesis."""

import numpy as np
import pytest

from seranet.phantom import (BACKGROUND, CSF, DEFAULT_TISSUES, GM, NUM_CLASSES,
                             WM, SequenceParams, TissueParams,
                             generate_label_map, labels_to_onehot,
                             load_tissue_table, sample_sequence_params,
                             save_tissue_table, spin_echo_signal,
                             synthesize_complex_image)

# High-precision evaluation of PD*(1-exp(-TR/T1))*exp(-TE/T2) at
# PD=1, T1=1.0, T2=0.1, TE=0.08, TR=3.0, frozen from an arbitrary-precision
# calculator run.
SPIN_ECHO_REFERENCE = 0.4269581922610560


def tissue(tid=WM, T1=0.5, T2=0.07, PD=0.77):
    return TissueParams(tissue_id=tid, T1=T1, T2=T2, PD=PD)


class TestTissueParams:
    def test_default_table_covers_all_classes(self):
        ids = sorted(t.tissue_id for t in DEFAULT_TISSUES)
        assert ids == [BACKGROUND, CSF, GM, WM]

    def test_default_table_physical_ordering(self):
        for t in DEFAULT_TISSUES:
            assert 0 < t.T2 < t.T1
            assert 0.0 <= t.PD <= 1.0
        background = next(t for t in DEFAULT_TISSUES if t.tissue_id == BACKGROUND)
        assert background.PD == 0.0

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            tissue(T1=-1.0)
        with pytest.raises(ValueError):
            tissue(T2=0.0)
        with pytest.raises(ValueError):
            tissue(T1=0.1, T2=0.5)  # T2 must stay below T1
        with pytest.raises(ValueError):
            tissue(PD=1.5)
        with pytest.raises(ValueError):
            tissue(tid=7)

    def test_table_roundtrips_through_json(self, tmp_path):
        path = tmp_path / "tissues.json"
        save_tissue_table(DEFAULT_TISSUES, path)
        back = load_tissue_table(path)
        assert [t.tissue_id for t in back] == [t.tissue_id for t in DEFAULT_TISSUES]
        for a in DEFAULT_TISSUES:
            b = next(t for t in back if t.tissue_id == a.tissue_id)
            assert (b.T1, b.T2, b.PD) == (a.T1, a.T2, a.PD)


class TestLabelMaps:
    def test_all_classes_present(self):
        lm = generate_label_map(seed=7, height=64, width=64)
        assert sorted(np.unique(lm.labels)) == [0, 1, 2, 3]

    def test_deterministic(self):
        a = generate_label_map(seed=7, height=64, width=64)
        b = generate_label_map(seed=7, height=64, width=64)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_seed_changes_grid(self):
        a = generate_label_map(seed=7, height=64, width=64)
        b = generate_label_map(seed=8, height=64, width=64)
        assert (a.labels != b.labels).any()

    def test_border_ring_is_background(self):
        lm = generate_label_map(seed=3, height=48, width=80)
        edge = np.concatenate([lm.labels[0], lm.labels[-1],
                               lm.labels[:, 0], lm.labels[:, -1]])
        assert (edge == BACKGROUND).all()

    def test_rejects_tiny_dims(self):
        with pytest.raises(ValueError):
            generate_label_map(seed=0, height=16, width=64)
        with pytest.raises(ValueError):
            generate_label_map(seed=0, height=64, width=31)

    def test_many_seeds_all_classes(self):
        # the geometry sampler must never drop a tissue class
        for seed in range(25):
            lm = generate_label_map(seed=seed, height=64, width=64)
            assert len(np.unique(lm.labels)) == NUM_CLASSES


class TestSequenceParams:
    def test_sampled_within_five_percent_windows(self):
        for seed in range(50):
            seq = sample_sequence_params(seed)
            assert 0.076 <= seq.TE <= 0.084
            assert 2.85 <= seq.TR <= 3.15

    def test_deterministic(self):
        assert sample_sequence_params(11) == sample_sequence_params(11)

    def test_seeds_vary(self):
        values = {sample_sequence_params(s).TE for s in range(10)}
        assert len(values) > 1


class TestSpinEchoSignal:
    def test_full_recovery_limit(self):
        # TE=0 kills T2 decay, huge TR saturates T1 recovery
        seq = SequenceParams(TE=0.0, TR=1e9)
        assert spin_echo_signal(tissue(T1=1.0, T2=0.1, PD=1.0), seq) == pytest.approx(1.0)

    def test_reference_value(self):
        seq = SequenceParams(TE=0.08, TR=3.0)
        s = spin_echo_signal(tissue(T1=1.0, T2=0.1, PD=1.0), seq)
        assert s == pytest.approx(SPIN_ECHO_REFERENCE, abs=1e-12)

    def test_long_te_decays_to_zero(self):
        seq = SequenceParams(TE=1e6, TR=3.0)
        s = spin_echo_signal(tissue(T1=1.0, T2=0.1, PD=0.8), seq)
        assert s == pytest.approx(0.0, abs=1e-300)

    def test_monotone_in_te_and_tr(self):
        t = tissue(T1=0.9, T2=0.09, PD=1.0)
        te_grid = np.linspace(0.01, 0.3, 100)
        s_te = [spin_echo_signal(t, SequenceParams(TE=te, TR=3.0)) for te in te_grid]
        assert all(a > b for a, b in zip(s_te, s_te[1:]))
        tr_grid = np.linspace(0.3, 8.0, 100)
        s_tr = [spin_echo_signal(t, SequenceParams(TE=0.08, TR=tr)) for tr in tr_grid]
        assert all(a < b for a, b in zip(s_tr, s_tr[1:]))

    def test_bounded_by_proton_density(self):
        for pd in (0.3, 0.77, 1.0):
            s = spin_echo_signal(tissue(PD=pd), SequenceParams(TE=0.08, TR=3.0))
            assert 0 < s <= pd


class TestSynthesis:
    def test_zero_phase_is_pure_real(self):
        lm = generate_label_map(seed=2, height=64, width=64)
        seq = SequenceParams(TE=0.08, TR=3.0)
        img = synthesize_complex_image(lm, DEFAULT_TISSUES, seq, phase_seed=0,
                                       phase_coeffs=(0.0, 0.0, 0.0, 0.0))
        assert np.all(img.im == 0)
        assert np.all(img.re >= 0)

    def test_magnitude_matches_signal_model(self):
        lm = generate_label_map(seed=2, height=64, width=64)
        seq = SequenceParams(TE=0.08, TR=3.0)
        img = synthesize_complex_image(lm, DEFAULT_TISSUES, seq, phase_seed=9)
        wm = next(t for t in DEFAULT_TISSUES if t.tissue_id == WM)
        expected = spin_echo_signal(wm, seq)
        wm_pixels = img.magnitude[lm.labels == WM]
        np.testing.assert_allclose(wm_pixels, expected, rtol=1e-12)

    def test_background_is_signal_free(self):
        lm = generate_label_map(seed=5, height=64, width=64)
        seq = SequenceParams(TE=0.08, TR=3.0)
        img = synthesize_complex_image(lm, DEFAULT_TISSUES, seq, phase_seed=1)
        assert np.all(img.magnitude[lm.labels == BACKGROUND] == 0)

    def test_deterministic(self):
        lm = generate_label_map(seed=4, height=64, width=64)
        seq = SequenceParams(TE=0.078, TR=2.9)
        a = synthesize_complex_image(lm, DEFAULT_TISSUES, seq, phase_seed=13)
        b = synthesize_complex_image(lm, DEFAULT_TISSUES, seq, phase_seed=13)
        np.testing.assert_array_equal(a.data, b.data)

    def test_missing_tissue_entry_rejected(self):
        lm = generate_label_map(seed=4, height=64, width=64)
        seq = SequenceParams(TE=0.08, TR=3.0)
        partial = [t for t in DEFAULT_TISSUES if t.tissue_id != GM]
        with pytest.raises(ValueError):
            synthesize_complex_image(lm, partial, seq, phase_seed=0)


class TestOnehot:
    def test_all_background(self):
        onehot = labels_to_onehot(np.zeros((8, 8), dtype=np.uint8))
        assert onehot.shape == (4, 8, 8)
        np.testing.assert_array_equal(onehot[0], 1.0)
        np.testing.assert_array_equal(onehot[1:], 0.0)

    def test_single_pixel_vector(self):
        labels = np.zeros((8, 8), dtype=np.uint8)
        labels[3, 5] = GM
        onehot = labels_to_onehot(labels)
        np.testing.assert_array_equal(onehot[:, 3, 5], [0, 0, 1, 0])

    def test_partition_of_unity(self):
        lm = generate_label_map(seed=9, height=64, width=64)
        onehot = labels_to_onehot(lm)
        np.testing.assert_array_equal(onehot.sum(axis=0), 1.0)

    def test_argmax_roundtrip(self):
        lm = generate_label_map(seed=9, height=64, width=64)
        onehot = labels_to_onehot(lm)
        np.testing.assert_array_equal(np.argmax(onehot, axis=0), lm.labels)

    def test_out_of_range_rejected(self):
        labels = np.full((8, 8), 4, dtype=np.uint8)
        with pytest.raises(ValueError):
            labels_to_onehot(labels)
