/**
 * Render-request loop: rate-limited to one request per debounce window,
 * at most one request in flight, stale responses dropped (latest wins).
 *
 * Time sources and fetch are injectable so the contract is testable without
 * a browser.
 */

import { buildRenderUrl, MetaPayload, ViewerState } from "./state.js";

export type FetchBytes = (url: string) => Promise<Uint8Array>;

export interface ClientHooks {
  fetchBytes: FetchBytes;
  now: () => number;
  schedule: (fn: () => void, ms: number) => unknown;
  cancel: (handle: unknown) => void;
  /** Called with the bytes of the newest completed request. */
  onImage: (bytes: Uint8Array, state: ViewerState) => void;
  onStatus?: (status: "ok" | "unreachable") => void;
}

export const DEBOUNCE_MS = 120;
const RETRY_BASE_MS = 500;
const RETRY_MAX_MS = 8000;

export function defaultHooks(partial: Partial<ClientHooks>): ClientHooks {
  return {
    fetchBytes: async (url: string) => {
      const res = await fetch(url);
      if (!res.ok) throw new Error(`${res.status} for ${url}`);
      return new Uint8Array(await res.arrayBuffer());
    },
    now: () => performance.now(),
    schedule: (fn, ms) => setTimeout(fn, ms),
    cancel: (h) => clearTimeout(h as number),
    onImage: () => undefined,
    ...partial,
  };
}

export class RenderClient {
  private seq = 0;
  private displayedSeq = 0;
  private inFlight = false;
  private lastFireTime = -Infinity;
  private pending: ViewerState | null = null;
  private timer: unknown | null = null;

  constructor(private base: string, private hooks: ClientHooks) {}

  async fetchMeta(): Promise<MetaPayload> {
    let delay = RETRY_BASE_MS;
    for (;;) {
      try {
        const bytes = await this.hooks.fetchBytes(`${this.base}/meta`);
        this.hooks.onStatus?.("ok");
        return JSON.parse(new TextDecoder().decode(bytes)) as MetaPayload;
      } catch {
        this.hooks.onStatus?.("unreachable");
        await new Promise<void>((resolve) => this.hooks.schedule(() => resolve(), delay));
        delay = Math.min(delay * 2, RETRY_MAX_MS);
      }
    }
  }

  /** Request a render for `state`; bursts collapse onto the newest state. */
  requestRender(state: ViewerState): void {
    this.pending = state;
    this.maybeFire();
  }

  private maybeFire(): void {
    if (this.pending === null || this.inFlight || this.timer !== null) {
      return;
    }
    const wait = this.lastFireTime + DEBOUNCE_MS - this.hooks.now();
    if (wait > 0) {
      this.timer = this.hooks.schedule(() => {
        this.timer = null;
        this.maybeFire();
      }, wait);
      return;
    }
    const state = this.pending;
    this.pending = null;
    this.fire(state);
  }

  private fire(state: ViewerState): void {
    const mySeq = ++this.seq;
    this.lastFireTime = this.hooks.now();
    this.inFlight = true;
    this.hooks
      .fetchBytes(buildRenderUrl(this.base, state))
      .then((bytes) => {
        this.hooks.onStatus?.("ok");
        if (mySeq > this.displayedSeq) {
          this.displayedSeq = mySeq;
          this.hooks.onImage(bytes, state);
        }
      })
      .catch(() => {
        this.hooks.onStatus?.("unreachable");
      })
      .finally(() => {
        this.inFlight = false;
        this.maybeFire();
      });
  }
}
