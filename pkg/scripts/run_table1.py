"""Mutation operator and hill-climbing comparison on 10:1 mixtures (minor profile known).

    python scripts/run_table1.py --samples 10 --cells "GM, N_H=0" "RM, N_H=0" "RM, N_H=2"
"""

from _common import log_record, parser, write_outputs

from mixdeconv import benchmarks as B


def main() -> None:
    p = parser(__doc__.splitlines()[0], "table1")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--cells", nargs="+", default=list(B.TABLE1_CELLS), choices=list(B.TABLE1_CELLS))
    p.add_argument("--nu", type=float, default=1500.0)
    a = p.parse_args()
    recs = B.table1(cells=a.cells, n_samples=a.samples, nu=a.nu, seed=a.seed, threads=a.threads, log=log_record)
    write_outputs(a.out, recs)


if __name__ == "__main__":
    main()
