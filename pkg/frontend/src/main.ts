/** DOM wiring: orbit drag, channel buttons, threshold slider, status banner. */

import { DEBOUNCE_MS, defaultHooks, RenderClient } from "./client.js";
import { Channel, clampThreshold, initialState, orbitBy, ViewerState } from "./state.js";

const SERVICE = (window as { RAYLAPLACE_URL?: string }).RAYLAPLACE_URL ??
  `http://${location.hostname || "127.0.0.1"}:8787`;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el as T;
}

async function run(): Promise<void> {
  const image = byId<HTMLImageElement>("view");
  const banner = byId<HTMLDivElement>("banner");
  const slider = byId<HTMLInputElement>("threshold");
  const readout = byId<HTMLSpanElement>("threshold-value");

  let objectUrl: string | null = null;
  const client = new RenderClient(
    SERVICE,
    defaultHooks({
      onImage: (bytes, state) => {
        if (state.channel === "depth") return; // raw plane, not displayable
        if (objectUrl) URL.revokeObjectURL(objectUrl);
        objectUrl = URL.createObjectURL(new Blob([bytes as BlobPart], { type: "image/png" }));
        image.src = objectUrl;
      },
      onStatus: (status) => {
        banner.hidden = status === "ok";
      },
    }),
  );

  const meta = await client.fetchMeta();
  let state: ViewerState = initialState(meta);
  slider.value = String(state.threshold);
  readout.textContent = state.threshold.toFixed(2);
  client.requestRender(state);

  const update = (next: ViewerState) => {
    state = next;
    client.requestRender(state);
  };

  slider.addEventListener("input", () => {
    const threshold = clampThreshold(Number(slider.value));
    readout.textContent = threshold.toFixed(2);
    update({ ...state, threshold, channel: "filtered" });
    (byId<HTMLInputElement>("channel-filtered")).checked = true;
  });

  for (const channel of ["rgb", "unc", "filtered"] as Channel[]) {
    byId<HTMLInputElement>(`channel-${channel}`).addEventListener("change", () => {
      update({ ...state, channel });
    });
  }

  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  image.addEventListener("pointerdown", (e) => {
    dragging = true;
    lastX = e.clientX;
    lastY = e.clientY;
    image.setPointerCapture(e.pointerId);
  });
  image.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    const dx = e.clientX - lastX;
    const dy = e.clientY - lastY;
    if (Math.abs(dx) < 2 && Math.abs(dy) < 2) return;
    lastX = e.clientX;
    lastY = e.clientY;
    update(orbitBy(state, -dx, dy));
  });
  image.addEventListener("pointerup", () => {
    dragging = false;
  });

  // the debounce window is the floor for how often scrubbing can re-render
  console.log(`render requests limited to one per ${DEBOUNCE_MS} ms`);
}

run().catch((err) => {
  byId<HTMLDivElement>("banner").textContent = String(err);
  byId<HTMLDivElement>("banner").hidden = false;
});
