"""Device heterogeneity and deadline-fitted workloads.

Devices differ by orders of magnitude in compute speed and bandwidth.
The deadline protocol measures each sampled client with a one-batch
probe, projects its full-epoch compute and upload times, sets the round
deadline to the k-th smallest projected total, and then fits every
client's workload to that deadline: fast clients run extra epochs, slow
clients train a partial model so their (smaller) upload still lands in
time.
"""

from fedsim import (
    aggregation_interval,
    effective_compute_time,
    init_model,
    local_time_update,
    ratio_to_mask,
    round_capability,
    synth_population,
    workload_schedule,
)

population = synth_population(8, seed=4)
bases = [p.base_compute_s_per_batch for p in population]
print(f"population of {len(population)}: base compute "
      f"{min(bases):.3f}..{max(bases):.3f} s/batch "
      f"({max(bases) / min(bases):.1f}x spread)")

# Per-round capability: clamped-Gaussian disturbance times base compute,
# plus a bandwidth draw from the device's observation pool. Keyed by
# (seed, client, round), so it never depends on event order.
cap0 = round_capability(11, population[0], round_index=1)
print(f"client 0, round 1: disturbance w={cap0.disturbance_w:.3f}, "
      f"bandwidth {cap0.bandwidth_bps / 1e3:.0f} kbps")

model = init_model((16, 64, 32, 10), seed=0)
batches_per_epoch = 20

estimates = []
for profile in population:
    cap = round_capability(11, profile, round_index=1)
    probe_s = effective_compute_time(profile, cap.disturbance_w)
    estimates.append(local_time_update(
        profile.client_id, probe_s, 1.0 / batches_per_epoch,
        model.payload_bytes, cap.bandwidth_bps,
    ))

k = 6
deadline = aggregation_interval(estimates, k)
print(f"\nprojected totals: " +
      ", ".join(f"{e.total_unit_s:.1f}" for e in sorted(estimates, key=lambda e: e.total_unit_s)))
print(f"deadline T_k (k={k}): {deadline:.1f}s\n")

print(f"{'client':>6} {'t_cmp':>8} {'t_com':>8} {'epochs':>6} {'alpha':>6} {'layers':>12}")
for est in estimates:
    sched = workload_schedule(deadline, est, round_index=1)
    mask = ratio_to_mask(sched.alpha, model)
    layers = f"{mask.trainable_suffix_start}..{model.layer_count - 1}"
    print(f"{est.client_id:>6} {est.compute_unit_s:>8.1f} {est.transfer_unit_s:>8.1f} "
          f"{sched.epochs:>6} {sched.alpha:>6.2f} {layers:>12}")

print("\nfast clients get extra epochs; clients over the deadline train a"
      "\npartial suffix sized so compute plus upload still fits")
