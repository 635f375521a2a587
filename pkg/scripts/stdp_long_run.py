"""Long unsupervised STDP run: 784:256 hardware network on the full training set.

Hours on a desktop CPU. Usage: python scripts/stdp_long_run.py [epochs] [neurons]
"""
import sys
from pathlib import Path

from neurosoc import create_app
from neurosoc.services.datasets import load_mnist
from neurosoc.services.encoding import EncoderParams
from neurosoc.services.reporting import write_metrics_csv
from neurosoc.services.runs import record_run
from neurosoc.services.training import StdpNetworkConfig, export_stdp, stdp_evaluate, stdp_train


def main():
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 1
    neurons = int(sys.argv[2]) if len(sys.argv) > 2 else 256
    app = create_app()
    with app.app_context():
        seed = app.config["NEUROSOC_SEED"]
        data_dir = app.config["NEUROSOC_DATA_DIR"]
        out = Path(app.config["NEUROSOC_RESULTS_DIR"]) / f"stdp-long-{neurons}"
        config = StdpNetworkConfig(n_neurons=neurons, epochs=epochs, seed=seed)
        encoder = EncoderParams(rng_seed=seed)
        with record_run("stdp-long", {"neurons": neurons, "epochs": epochs}, seed) as run:
            train = load_mnist(data_dir, "train")
            test = load_mnist(data_dir, "test")
            result = stdp_train(config, train, encoder=encoder)
            accuracy, _ = stdp_evaluate(result, test, encoder)
            export_stdp(result, out)
            metrics = {"accuracy": round(accuracy, 6), "samples_seen": result.samples_seen, "train_spikes": result.train_spikes}
            write_metrics_csv(out / "metrics.csv", metrics)
            run.finish(metrics, out)
        print(f"STDP {neurons} neurons, {epochs} epoch(s): test accuracy {accuracy:.4f} (target 0.80)")


if __name__ == "__main__":
    main()
