"""Write a toy model, SAE, token corpus and run.toml for dry runs.

    python scripts/make_toy_assets.py toy_assets
    saesense sensitivity -c toy_assets/run.toml
"""
import argparse

from saesense.toy import write_toy_assets


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("directory", nargs="?", default="toy_assets")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--latents", type=int, default=256)
    args = p.parse_args()
    print(write_toy_assets(args.directory, args.seed, args.latents))


if __name__ == "__main__":
    main()
