#!/usr/bin/env python3
"""Tune the reconstruction weight on a held-out validation scan.

Runs the learned-prior solver at each candidate weight on a noisy jaw scan
whose seed is distinct from the bench-suite scans, reports PSNR against the
effective-attenuation ground truth, and prints the winner. The chosen value
is what bench.DEFAULT_LAMBDA should equal (LAMBDA_SCALE = best / 20).
"""

import argparse
import time

from gsct import bench, physics, pnp, recon
from gsct import dataset as ds
from gsct import denoiser as dn
from gsct import training as tr


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", required=True)
    ap.add_argument("--seed", type=int, default=1,
                    help="validation scan seed (bench experiments use 0)")
    ap.add_argument("--weights", type=float, nargs="+",
                    default=[0.05, 0.1, 0.2, 0.4, 0.8])
    ap.add_argument("--iterations", type=int, default=300)
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--spacing", type=float, default=0.3)
    args = ap.parse_args()

    model = dn.load_model(args.model)
    mm, geometry, sim = bench.benchmark_scan(args.seed, "lambda-tune")
    acq = ds.AcquisitionParams(exposure_mas=bench.BENCH_EXPOSURE_MAS,
                               num_angles=bench.BENCH_VIEWS)
    reference = physics.effective_attenuation_map(mm, acq.acquisition(0).spectrum)
    grid = recon.ReconGrid(args.size, args.size, args.spacing)

    tau = 1.0 / recon.estimate_lipschitz(geometry, grid, 16)
    gd = recon.gd_reconstruct(sim.noisy_log, geometry, grid, step=tau,
                              iterations=args.iterations)
    print(f"lam=0 (plain gradient descent): {tr.psnr(gd, reference):.3f} dB",
          flush=True)

    best_lam, best_psnr = 0.0, tr.psnr(gd, reference)
    for lam in args.weights:
        t0 = time.monotonic()
        image, _ = pnp.gspnp_reconstruct(
            sim.noisy_log, geometry, grid,
            pnp.GSPnPConfig(lam=lam, model=model, iterations=args.iterations))
        p = tr.psnr(image, reference)
        print(f"lam={lam:g}: {p:.3f} dB  ({time.monotonic() - t0:.0f}s)",
              flush=True)
        if p > best_psnr:
            best_lam, best_psnr = lam, p
    print(f"best: lam={best_lam:g} at {best_psnr:.3f} dB "
          f"(LAMBDA_SCALE = {best_lam / 20.0:g})")


if __name__ == "__main__":
    main()
