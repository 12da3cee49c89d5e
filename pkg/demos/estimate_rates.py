"""Sample a repetition-code DEM and estimate its rates two ways."""
import numpy as np

from demkit import estimate_from_moments
from demkit.demmodel import sample
from demkit.estparity import estimate_from_parities
from demkit.synthetic import repetition_code_dem


def main(shots=10**6, seed=1):
    dem = repetition_code_dem(5, 5, rate_range=(0.002, 0.02), seed=seed)
    batch = sample(dem, shots, seed=seed)
    moments = estimate_from_moments(batch, dem, w=3)
    parities = estimate_from_parities(batch, dem)
    print(f"{'edge':<12}{'true':>10}{'moments':>10}{'parities':>10}{'sigma':>10}")
    for k, e in enumerate(dem.edges[:12]):
        print(f"{str(e):<12}{dem.rates[k]:10.5f}{moments.theta[k]:10.5f}{parities.theta[k]:10.5f}{parities.sigma[k]:10.2e}")
    for rep in (moments, parities):
        z = (rep.theta - dem.rates) / rep.sigma
        print(f"{rep.algorithm}: max |z| {np.abs(z).max():.2f}, residual variance {z.var():.2f}")


if __name__ == "__main__":
    main()
