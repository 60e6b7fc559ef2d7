/**
 * Rate-limits a continuous control (slider drag) to at most one emit per
 * interval, last value wins. The first change in a quiet period fires
 * immediately; later changes within the window are collapsed into one
 * trailing emit carrying the newest value.
 */

export class Coalescer<T> {
  private lastEmit = -Infinity;
  private pending: T | undefined;
  private handle: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly emit: (value: T) => void,
    private readonly intervalMs = 100,
    private readonly now: () => number = () => Date.now(),
  ) {}

  push(value: T): void {
    const t = this.now();
    if (this.handle === null && t - this.lastEmit >= this.intervalMs) {
      this.lastEmit = t;
      this.emit(value);
      return;
    }
    this.pending = value;
    if (this.handle === null) {
      const wait = Math.max(0, this.intervalMs - (t - this.lastEmit));
      this.handle = setTimeout(() => this.flush(), wait);
    }
  }

  private flush(): void {
    this.handle = null;
    if (this.pending !== undefined) {
      const value = this.pending;
      this.pending = undefined;
      this.lastEmit = this.now();
      this.emit(value);
    }
  }

  /** Drop anything queued (e.g. on disconnect). */
  cancel(): void {
    if (this.handle !== null) clearTimeout(this.handle);
    this.handle = null;
    this.pending = undefined;
  }
}
