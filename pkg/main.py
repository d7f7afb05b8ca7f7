"""
Точка входа в программу SDAN.

Использование:
    python main.py gen-data --procedural 8 --out ds/ --count 64
    python main.py train --data ds/ --out run/ --preset sdcn-cpa-flip
    python main.py infer --checkpoint run/checkpoints/final --input photo.png --out zoomed/
    python main.py eval --checkpoint run/checkpoints/final --data ds/ --out report/
    python main.py gradcheck --f64

Разбор аргументов и коды выхода описаны в модуле cli.
"""

import sys

from cli import main


if __name__ == "__main__":
    sys.exit(main())
