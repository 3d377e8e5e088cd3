/**
 * Trailing-edge rate limiter: calls pass through immediately when the
 * minimum interval has elapsed; otherwise the newest value is held and
 * flushed once the interval expires (intermediate values are dropped, so
 * the last event always gets through). Guarantees at most
 * `ratePerSecond` emissions per second for any input-event rate.
 */
export class Throttle<T> {
  private readonly intervalMs: number;
  private lastEmit = -Infinity;
  private pending: T | undefined;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly emit: (value: T) => void,
    ratePerSecond = 60,
    private readonly now: () => number = () => Date.now(),
  ) {
    if (ratePerSecond <= 0) throw new Error("ratePerSecond must be positive");
    // ceil: with millisecond-resolution timers a fractional interval could
    // round down and exceed the rate
    this.intervalMs = Math.ceil(1000 / ratePerSecond);
  }

  push(value: T): void {
    const t = this.now();
    if (t - this.lastEmit >= this.intervalMs) {
      this.lastEmit = t;
      this.emit(value);
      return;
    }
    this.pending = value;
    if (this.timer === null) {
      const wait = this.intervalMs - (t - this.lastEmit);
      this.timer = setTimeout(() => this.flush(), wait);
    }
  }

  /** Emit the held value now (used by the timer; exposed for tests). */
  flush(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    if (this.pending !== undefined) {
      this.lastEmit = this.now();
      const v = this.pending;
      this.pending = undefined;
      this.emit(v);
    }
  }

  dispose(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.pending = undefined;
  }
}
