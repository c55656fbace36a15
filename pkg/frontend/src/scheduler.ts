// Debounced, single-flight expansion requests with last-write-wins delivery.
// Slider spam therefore costs at most one in-flight request, and a stale
// response can never paint over a newer one.

import type { ExpansionResponse } from './types.js';

export interface ExpansionKey {
  alpha: number;
  pc: number;
}

export type ExpansionFetcher = (alpha: number, pc: number) => Promise<ExpansionResponse>;

export const DEBOUNCE_MS = 150;

function sameKey(a: ExpansionKey, b: ExpansionKey): boolean {
  return a.alpha === b.alpha && a.pc === b.pc;
}

export class ExpansionScheduler {
  private desired: ExpansionKey | null = null;
  private inFlight: ExpansionKey | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;
  inFlightCount = 0; // observable for tests

  constructor(
    private fetcher: ExpansionFetcher,
    private onResult: (key: ExpansionKey, resp: ExpansionResponse) => void,
    private onError: (key: ExpansionKey, err: unknown) => void,
    private debounceMs: number = DEBOUNCE_MS,
  ) {}

  /** Ask for the overlay at (alpha, pc); coalesces bursts via the debounce. */
  request(alpha: number, pc: number): void {
    this.desired = { alpha, pc };
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.fire();
    }, this.debounceMs);
  }

  private fire(): void {
    if (this.desired === null || this.inFlight !== null) return;
    const key = this.desired;
    this.inFlight = key;
    this.inFlightCount++;
    this.fetcher(key.alpha, key.pc).then(
      (resp) => this.settle(key, () => {
        // deliver only if nothing newer was requested meanwhile
        if (this.desired !== null && sameKey(this.desired, key)) {
          this.onResult(key, resp);
        }
      }),
      (err) => this.settle(key, () => {
        if (this.desired !== null && sameKey(this.desired, key)) {
          this.onError(key, err);
        }
      }),
    );
  }

  private settle(key: ExpansionKey, deliver: () => void): void {
    this.inFlight = null;
    deliver();
    // superseded while in flight: immediately chase the newest parameters
    if (this.desired !== null && !sameKey(this.desired, key)) {
      this.fire();
    }
  }
}
