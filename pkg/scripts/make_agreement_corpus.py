import sys
import os
import argparse
import logging

# Add parent directory to path to allow imports from `dmlm`
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from dmlm.core.errors import DMLMError
from dmlm.core.logging_config import setup_logging
from dmlm.crud.files import write_text
from dmlm.services.synthetic_service import agreement_corpus

setup_logging()
logger = logging.getLogger(__name__)


def main():
    parser = argparse.ArgumentParser(description="Write a synthetic long-range agreement treebank (CoNLL-U).")
    parser.add_argument("--out-dir", default="data/agreement")
    parser.add_argument("--train", type=int, default=5000)
    parser.add_argument("--valid", type=int, default=500)
    parser.add_argument("--test", type=int, default=500)
    parser.add_argument("--seed", type=int, default=1234)
    parser.add_argument("--max-distractors", type=int, default=3)
    args = parser.parse_args()

    try:
        for offset, (split, n) in enumerate((("train", args.train), ("valid", args.valid), ("test", args.test))):
            path = os.path.join(args.out_dir, f"{split}.conllu")
            write_text(path, agreement_corpus(n, seed=args.seed + offset, max_distractors=args.max_distractors))
            logger.info(f"Wrote {n} sentences to {path}")
    except DMLMError as e:
        logger.critical(f"Failed to write the agreement corpus: {e}", exc_info=True)
        sys.exit(e.exit_code)


if __name__ == "__main__":
    main()
    logger.info("Agreement corpus script completed.")
