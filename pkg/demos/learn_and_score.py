"""Learn a DEM structure from syndromes and compare models by KL and AIC."""
from demkit.demmodel import Dem, sample
from demkit.estparity import learn_from_parities
from demkit.score import compare_models
from demkit.synthetic import repetition_code_dem


def main(shots=10**6):
    reference = repetition_code_dem(4, 3, 2e-3)
    # the "hardware" has two correlated errors the reference lacks
    extra = [(0, 5), (2, 7, 9)]
    truth = Dem.merged(reference.n, reference.edges + extra, list(reference.rates) + [5e-4, 5e-4], reference.coords)
    train, held_out = sample(truth, shots, seed=1), sample(truth, shots, seed=2)

    edges, report = learn_from_parities(train, k_max=4)
    missing = set(truth.edges) - set(edges)
    print(f"learned {len(edges)} edges, true {len(truth)}, missing {sorted(missing)}")

    table = compare_models(train, held_out, {"reference": reference, "refit": reference, "learned": None},
                           {"refit": "parities", "learned": "learn-parities"})
    print(f"{'model':<10}{'E':>5}{'KL':>12}{'stderr':>10}{'dAIC':>12}")
    for m in table:
        print(f"{m.name:<10}{m.score.E:5d}{m.score.kl:12.5f}{m.score.stderr:10.4f}{m.delta_aic:12.1f}")


if __name__ == "__main__":
    main()
