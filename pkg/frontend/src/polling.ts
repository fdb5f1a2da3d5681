/** setInterval-based polling with overlap protection: a tick never starts
 * while the previous fetch is still running. */

export interface Poller {
  start(): void;
  stop(): void;
  destroy(): void;
}

export function createPoller(tick: () => Promise<void>, intervalMs: number): Poller {
  let timer: ReturnType<typeof setInterval> | null = null;
  let running = false;
  let destroyed = false;

  async function run() {
    if (running || destroyed) return;
    running = true;
    try {
      await tick();
    } finally {
      running = false;
    }
  }

  return {
    start() {
      if (destroyed || timer !== null) return;
      void run();
      timer = setInterval(() => void run(), intervalMs);
    },
    stop() {
      if (timer !== null) {
        clearInterval(timer);
        timer = null;
      }
    },
    destroy() {
      destroyed = true;
      this.stop();
    },
  };
}
