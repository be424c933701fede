/** Side-by-side looping playback with drift correction.
 *
 * Both videos loop; the right player is re-aligned to the left whenever
 * they drift apart by more than the tolerance, so the pair stays in sync
 * across loop boundaries and buffering hiccups.
 */

const SYNC_TOLERANCE_S = 0.25;

export class PlayerPair {
  private onError?: () => void;

  constructor(
    private readonly left: HTMLVideoElement,
    private readonly right: HTMLVideoElement,
  ) {
    for (const v of [left, right]) {
      v.loop = true;
      v.muted = true;
      v.playsInline = true;
    }
    this.left.addEventListener("timeupdate", () => this.resync());
  }

  load(leftUrl: string, rightUrl: string, onError: () => void): void {
    this.onError = onError;
    for (const [video, url] of [
      [this.left, leftUrl],
      [this.right, rightUrl],
    ] as const) {
      video.onerror = () => this.onError?.();
      video.src = url;
    }
    void Promise.all([this.safePlay(this.left), this.safePlay(this.right)]);
  }

  private async safePlay(video: HTMLVideoElement): Promise<void> {
    try {
      await video.play();
    } catch {
      this.onError?.();
    }
  }

  private resync(): void {
    if (this.right.readyState < 2 || this.left.readyState < 2) return;
    const drift = Math.abs(this.left.currentTime - this.right.currentTime);
    if (drift > SYNC_TOLERANCE_S) {
      this.right.currentTime = this.left.currentTime;
    }
  }

  stop(): void {
    for (const v of [this.left, this.right]) {
      v.pause();
      v.removeAttribute("src");
      v.load();
    }
  }
}
