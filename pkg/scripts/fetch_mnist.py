from neurosoc import create_app
from neurosoc.services.datasets import fetch_mnist, mnist_available


def main():
    app = create_app()
    with app.app_context():
        data_dir = app.config["NEUROSOC_DATA_DIR"]
        if mnist_available(data_dir):
            print(f"MNIST already present under {data_dir}")
            return
        files = fetch_mnist(data_dir, app.config["MNIST_BASE_URL"])
        print(f"MNIST downloaded: {len(files)} files under {data_dir}")


if __name__ == "__main__":
    main()
