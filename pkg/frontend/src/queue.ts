/**
 * Runs queued async tasks with a fixed concurrency cap. Grid tiles go
 * through one of these so a big mosaic never floods the service.
 */
export class TaskQueue {
  private active = 0;
  private waiting: Array<() => void> = [];

  constructor(private readonly maxConcurrent = 4) {
    if (!Number.isInteger(maxConcurrent) || maxConcurrent < 1) {
      throw new Error("maxConcurrent must be a positive integer");
    }
  }

  /** Resolve/reject with the task's outcome once a slot frees up. */
  async run<T>(task: () => Promise<T>): Promise<T> {
    if (this.active >= this.maxConcurrent) {
      await new Promise<void>((resolve) => this.waiting.push(resolve));
    }
    this.active += 1;
    try {
      return await task();
    } finally {
      this.active -= 1;
      const next = this.waiting.shift();
      if (next) next();
    }
  }

  /** Tasks currently holding a slot. */
  get running(): number {
    return this.active;
  }

  /** Tasks parked waiting for a slot. */
  get pending(): number {
    return this.waiting.length;
  }
}
