"""Script para executar a linha de comando do gascoll a partir do código-fonte."""

import sys
from pathlib import Path

# Adds the repository root to the path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.pipeline.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
