import json
import logging
import sys
from collections.abc import Sequence

from app.cli import HANDLERS, build_parser, make_context
from app.core.config import settings
from app.core.errors import ExhaustionError

logger = logging.getLogger(__name__)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level or settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        ctx = make_context(args)
        return HANDLERS[args.command](ctx)
    except ExhaustionError as exc:
        logger.error(f"{args.command} failed: {type(exc).__name__}: {exc.message}")
        print(json.dumps(exc.to_payload(), default=str), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
