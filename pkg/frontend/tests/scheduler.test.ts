import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import { ExpansionScheduler } from '../src/scheduler.js';
import type { ExpansionResponse } from '../src/types.js';

function response(tag: number): ExpansionResponse {
  return {
    mask: { width: 1, height: 1, runs: [0, 1] },
    stats: { seed_count: tag, expanded_count: tag, coverage: 0 },
  };
}

describe('ExpansionScheduler', () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it('debounces a burst into a single request', async () => {
    const calls: Array<[number, number]> = [];
    const sched = new ExpansionScheduler(
      (alpha, pc) => {
        calls.push([alpha, pc]);
        return Promise.resolve(response(1));
      },
      () => {},
      () => {},
    );
    for (let i = 0; i < 10; i++) sched.request(0.9 + i / 1000, 2);
    expect(calls).toHaveLength(0);
    await vi.advanceTimersByTimeAsync(200);
    expect(calls).toHaveLength(1);
    expect(calls[0][0]).toBeCloseTo(0.909);
  });

  it('keeps at most one request in flight and chases the newest params', async () => {
    let inFlight = 0;
    let maxInFlight = 0;
    const resolvers: Array<() => void> = [];
    const results: number[] = [];
    const sched = new ExpansionScheduler(
      (alpha) => {
        inFlight++;
        maxInFlight = Math.max(maxInFlight, inFlight);
        return new Promise<ExpansionResponse>((resolve) => {
          resolvers.push(() => {
            inFlight--;
            resolve(response(Math.round(alpha * 1000)));
          });
        });
      },
      (_key, resp) => results.push(resp.stats.seed_count),
      () => {},
    );
    sched.request(0.9, 2);
    await vi.advanceTimersByTimeAsync(200);
    // request for 0.9 now in flight; user keeps moving the slider
    sched.request(0.95, 2);
    await vi.advanceTimersByTimeAsync(200);
    sched.request(0.99, 2);
    await vi.advanceTimersByTimeAsync(200);
    expect(maxInFlight).toBe(1);
    resolvers[0]();           // 0.9 completes -> stale, discarded; 0.99 fired next
    await vi.advanceTimersByTimeAsync(1);
    expect(resolvers).toHaveLength(2);
    resolvers[1]();           // 0.99 completes -> delivered
    await vi.advanceTimersByTimeAsync(1);
    expect(maxInFlight).toBe(1);
    expect(results).toEqual([990]); // only the latest response painted
  });

  it('delivers errors only for the current parameters', async () => {
    const errors: number[] = [];
    let fail = true;
    const sched = new ExpansionScheduler(
      (alpha) => {
        if (fail) return Promise.reject(new Error(`boom ${alpha}`));
        return Promise.resolve(response(7));
      },
      () => {},
      (key) => errors.push(key.alpha),
    );
    sched.request(0.8, 2);
    await vi.advanceTimersByTimeAsync(200);
    expect(errors).toEqual([0.8]);
    fail = false;
    sched.request(0.85, 2);
    await vi.advanceTimersByTimeAsync(200);
    expect(errors).toEqual([0.8]);
  });
});
