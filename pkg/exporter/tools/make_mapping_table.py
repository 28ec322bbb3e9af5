"""Regenerate the checked-in mapping tables under src/exporter/tables/.

Run after changing the mapping generator or adding an architecture;
the test suite asserts the files match the generator output.
"""

from pathlib import Path

from exporter.architecture import available_architectures, named_architecture
from exporter.mapping import format_table, generate_mapping

TABLES = Path(__file__).resolve().parents[1] / "src" / "exporter" / "tables"


def main():
    TABLES.mkdir(parents=True, exist_ok=True)
    # tiny-parity is generated on the fly in tests; only ship real checkpoints' tables
    for name in available_architectures():
        if name != "mobilesam-v1":
            continue
        mapping = generate_mapping(named_architecture(name))
        path = TABLES / f"{name}.tsv"
        path.write_text(format_table(mapping), encoding="utf-8")
        print(f"wrote {len(mapping)} rows to {path}")


if __name__ == "__main__":
    main()
