"use strict";

const MIN_BOX = 0.02;
const state = { background: null, bbox: null, gallery: [], selected: -1, pinned: [], mode: "stamp", paint: null };

const $ = (id) => document.getElementById(id);
const canvas = $("canvas");
const overlay = $("overlay");

function setStatus(text, error = false) {
  $("status").textContent = text;
  $("status").className = error ? "error" : "";
}

async function api(method, path, body) {
  let res;
  try {
    res = await fetch(path, {
      method,
      headers: body ? { "Content-Type": "application/json" } : {},
      body: body ? JSON.stringify(body) : undefined,
    });
  } catch (e) {
    throw new Error("service unreachable, retry when it is back");
  }
  const json = await res.json().catch(() => ({}));
  if (!res.ok) throw new Error(`${res.status}: ${json.error || res.statusText}`);
  return json;
}

function canvasBase64(c) {
  return c.toDataURL("image/png").split(",")[1];
}

function normalizeBox(x0, y0, x1, y1) {
  const clamp = (v) => Math.min(1, Math.max(0, v));
  const box = [clamp(Math.min(x0, x1)), clamp(Math.min(y0, y1)), clamp(Math.max(x0, x1)), clamp(Math.max(y0, y1))];
  if (box[2] - box[0] < MIN_BOX || box[3] - box[1] < MIN_BOX) return null;
  return box;
}

function drawOverlay(preview) {
  const g = overlay.getContext("2d");
  if (state.mode === "retexture") {
    g.clearRect(0, 0, overlay.width, overlay.height);
    if (state.paint) {
      g.globalAlpha = 0.5;
      g.drawImage(state.paint, 0, 0);
      g.globalAlpha = 1;
    }
    return;
  }
  g.clearRect(0, 0, overlay.width, overlay.height);
  const box = preview || state.bbox;
  if (!box) return;
  g.strokeStyle = preview && !normalizeBox(...preview) ? "#ff6b6b" : "#4a9eff";
  g.lineWidth = 2;
  g.strokeRect(box[0] * 512, box[1] * 512, (box[2] - box[0]) * 512, (box[3] - box[1]) * 512);
}

function showImage(b64) {
  const img = new Image();
  img.onload = () => canvas.getContext("2d").drawImage(img, 0, 0, 512, 512);
  img.src = "data:image/png;base64," + b64;
}

function renderGallery() {
  const root = $("gallery");
  root.innerHTML = "";
  state.gallery.forEach((entry, k) => {
    const div = document.createElement("div");
    div.className = "entry" + (k === state.selected ? " selected" : "") + (state.pinned.includes(k) ? " pinned" : "");
    const img = document.createElement("img");
    img.src = "data:image/png;base64," + entry.composite;
    img.title = "click to select, shift-click to pin";
    div.appendChild(img);
    div.onclick = (ev) => {
      if (ev.shiftKey) {
        state.pinned = state.pinned.includes(k) ? state.pinned.filter((p) => p !== k) : [...state.pinned, k].slice(-2);
      } else {
        state.selected = k;
        showImage(entry.composite);
      }
      renderGallery();
    };
    root.appendChild(div);
  });
}

function addEntry(result, request) {
  state.gallery.push({
    composite: result.composite,
    mask_hash: result.hashes.mask,
    latents: result.latents,
    session: result.session,
    request,
  });
  state.selected = state.gallery.length - 1;
  showImage(result.composite);
  renderGallery();
}

async function resample(axis) {
  if (!state.background) return setStatus("load a background first", true);
  try {
    if (state.mode === "retexture") return await retexture();
    if (!state.bbox) return setStatus("drag a bounding box first", true);
    const base = state.gallery[state.selected];
    const req = { model: $("model").value, background: state.background, bbox: state.bbox };
    if (base && base.latents) {
      if (axis === "texture" && base.latents.z_mask) req.z_mask = base.latents.z_mask;
      if (axis === "shape" && base.latents.z_texture) req.z_texture = base.latents.z_texture;
    }
    setStatus("generating...");
    addEntry(await api("POST", "/v1/stamp", req), req);
    setStatus("");
  } catch (e) {
    setStatus(e.message, true);
  }
}

async function retexture() {
  if (!state.paint) return setStatus("paint a mask first", true);
  const mask = document.createElement("canvas");
  mask.width = mask.height = 512;
  const g = mask.getContext("2d");
  g.fillStyle = "#000";
  g.fillRect(0, 0, 512, 512);
  g.drawImage(state.paint, 0, 0);
  const req = { model: $("model").value, image: state.background, mask: canvasBase64(mask) };
  setStatus("generating...");
  addEntry(await api("POST", "/v1/retexture", req), req);
  setStatus("");
}

async function interpolate() {
  if (state.pinned.length !== 2) return setStatus("shift-click two gallery entries to pin them", true);
  const [a, b] = state.pinned.map((k) => state.gallery[k]);
  const axis = a.latents.z_mask && JSON.stringify(a.latents.z_mask) !== JSON.stringify(b.latents.z_mask) ? "mask" : "texture";
  const req = {
    model: $("model").value,
    background: a.request.background,
    bbox: a.request.bbox,
    axis,
    frames: 7,
    from: a.latents,
    to: { ...a.latents, [axis === "mask" ? "z_mask" : "z_texture"]: b.latents[axis === "mask" ? "z_mask" : "z_texture"] },
  };
  try {
    setStatus("interpolating...");
    const res = await api("POST", "/v1/interpolate", req);
    const strip = $("strip");
    strip.innerHTML = "";
    for (const frame of res.frames) {
      const img = document.createElement("img");
      img.src = "data:image/png;base64," + frame.composite;
      img.title = "alpha " + frame.alpha.toFixed(2);
      strip.appendChild(img);
    }
    setStatus("");
  } catch (e) {
    setStatus(e.message, true);
  }
}

function pointer(ev) {
  const r = overlay.getBoundingClientRect();
  return [(ev.clientX - r.left) / r.width, (ev.clientY - r.top) / r.height];
}

let drag = null;
overlay.addEventListener("pointerdown", (ev) => {
  if (!state.background) return;
  drag = pointer(ev);
  if (state.mode === "retexture") paintAt(drag);
});
overlay.addEventListener("pointermove", (ev) => {
  if (!drag) return;
  const p = pointer(ev);
  if (state.mode === "retexture") paintAt(p);
  else drawOverlay([Math.min(drag[0], p[0]), Math.min(drag[1], p[1]), Math.max(drag[0], p[0]), Math.max(drag[1], p[1])]);
});
overlay.addEventListener("pointerup", (ev) => {
  if (!drag) return;
  const p = pointer(ev);
  if (state.mode === "stamp") {
    const box = normalizeBox(drag[0], drag[1], p[0], p[1]);
    if (box) {
      state.bbox = box;
      drag = null;
      drawOverlay();
      resample("both");
      return;
    }
    setStatus("box too small", true);
  }
  drag = null;
  drawOverlay();
});

function paintAt([x, y]) {
  if (!state.paint) {
    state.paint = document.createElement("canvas");
    state.paint.width = state.paint.height = 512;
  }
  const g = state.paint.getContext("2d");
  g.fillStyle = "#fff";
  g.beginPath();
  g.arc(x * 512, y * 512, 14, 0, 2 * Math.PI);
  g.fill();
  drawOverlay();
}

$("file").addEventListener("change", (ev) => {
  const file = ev.target.files[0];
  if (!file) return;
  const img = new Image();
  img.onload = () => {
    canvas.getContext("2d").drawImage(img, 0, 0, 512, 512);
    state.background = canvasBase64(canvas);
    state.bbox = null;
    state.paint = null;
    drawOverlay();
  };
  img.src = URL.createObjectURL(file);
});

document.querySelectorAll("input[name=mode]").forEach((el) =>
  el.addEventListener("change", () => {
    state.mode = el.value;
    drawOverlay();
  }),
);
$("resample-shape").onclick = () => resample("shape");
$("resample-texture").onclick = () => resample("texture");
$("resample-both").onclick = () => resample("both");
$("interpolate").onclick = interpolate;

(async () => {
  try {
    const { models } = await api("GET", "/v1/models");
    for (const m of models) {
      const opt = document.createElement("option");
      opt.value = m.id;
      opt.textContent = `${m.id} (${m.label || "?"}, ${m.resolution}px)`;
      $("model").appendChild(opt);
    }
    if (!models.length) setStatus("no models loaded", true);
  } catch (e) {
    setStatus(e.message, true);
  }
})();
