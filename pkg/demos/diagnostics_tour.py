"""Windowed drift tracking and anomaly detection on simulated data."""
import numpy as np

from demkit.demmodel import sample
from demkit.diagnostics import detect_high_energy, detect_tls, inject_burst, inject_tls, track_windows
from demkit.syndromes import SyndromeBatch
from demkit.synthetic import repetition_code_dem


def drift():
    dem = repetition_code_dem(3, 4, 0.02)
    scales = np.linspace(1.0, 0.93, 8)
    parts = [sample(dem.with_rates(dem.rates * s), 50_000, seed=k) for k, s in enumerate(scales)]
    trace = track_windows(SyndromeBatch.concatenate(parts), dem, 50_000)
    for row in trace.rows():
        print(f"window {row['window']}: weighted attenuation {row['weighted_attenuation']:.4f}, "
              f"2 x mean Hamming weight {2 * row['mean_hamming']:.4f}")


def anomalies():
    dem = repetition_code_dem(25, 19, 0.01)
    batch = sample(dem, 10_000, seed=3, detectors_per_round=24)
    batch = inject_burst(batch, 2_000 * 20, amplitude=0.7, tau=50.0, seed=4)
    batch = inject_tls(batch, (5, 6), [150_000], width=16, seed=5)
    for e in detect_high_energy(batch, sample_shots=5000):
        print(f"burst in sample {e.sample} at round {e.round_start}: tau {e.tau:.1f}, r2 {e.r2:.3f}")
    events, _ = detect_tls(batch, dem.coords)
    for e in events:
        print(f"flicker on slots {e.pair} at round {e.round_start}: width {e.width}")


if __name__ == "__main__":
    drift()
    anomalies()
