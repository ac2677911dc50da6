"""Convert the official NAS-Bench-201 release into the llmnas JSON-lines format.

Needs the ``nas_201_api`` package and a benchmark file such as
``NAS-Bench-201-v1_1-096897.pth``; neither is a dependency of llmnas.

    python scripts/convert_nb201.py NAS-Bench-201-v1_1-096897.pth nb201.jsonl
    llmnas ingest nb201.jsonl nb201.canonical.jsonl

Accuracies are the 200-epoch, seed-averaged numbers:

* cifar10 valid: ``cifar10-valid`` x-valid; cifar10 test: ``cifar10`` ori-test
* cifar100 / ImageNet16-120: x-valid and x-test of the respective dataset
"""

import argparse
import json
import sys


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("benchmark", help="path to the official .pth release")
    parser.add_argument("output", help="JSON-lines file to write")
    args = parser.parse_args(argv)
    try:
        from nas_201_api import NASBench201API
    except ImportError:
        sys.exit("nas_201_api is required: pip install nas-bench-201")

    api = NASBench201API(args.benchmark, verbose=False)
    with open(args.output, "w", encoding="utf-8") as fh:
        for i in range(len(api)):
            c10v = api.get_more_info(i, "cifar10-valid", hp="200", is_random=False)
            c10 = api.get_more_info(i, "cifar10", hp="200", is_random=False)
            c100 = api.get_more_info(i, "cifar100", hp="200", is_random=False)
            img = api.get_more_info(i, "ImageNet16-120", hp="200", is_random=False)
            row = {
                "arch": api.arch(i),
                "cifar10": {"valid": c10v["valid-accuracy"], "test": c10["test-accuracy"]},
                "cifar100": {"valid": c100["valid-accuracy"], "test": c100["test-accuracy"]},
                "imagenet16_120": {"valid": img["valid-accuracy"], "test": img["test-accuracy"]},
            }
            fh.write(json.dumps(row) + "\n")
    print(f"wrote {len(api)} rows to {args.output}")


if __name__ == "__main__":
    main()
