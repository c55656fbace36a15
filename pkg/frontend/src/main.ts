// DOM wiring for the annotation client. All mask pixels shown here are
// decoded server responses; the client never computes an expansion itself.

import { ServiceClient, ApiError } from './api.js';
import { maskToRgba } from './overlay.js';
import { rleDecode } from './rle.js';
import { ExpansionScheduler } from './scheduler.js';
import {
  ALPHA_MAX, ALPHA_MIN, AnnotationState, PC_MAX, PC_MIN, addVertex, applyExpansion,
  canExpand, canExport, clearExpansion, closeRing, exportFilename, initialState,
  openSession, seedsGeoJson, setAlpha, setPc, undoRing,
} from './state.js';

const client = new ServiceClient('');
let state: AnnotationState = initialState();

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

const baseImg = $('base') as HTMLImageElement;
const overlayCanvas = $('overlay') as HTMLCanvasElement;
const vectorCanvas = $('vector') as HTMLCanvasElement;
const alphaSlider = $('alpha') as HTMLInputElement;
const alphaLabel = $('alpha-label');
const pcSelect = $('pc') as HTMLSelectElement;
const seedBadge = $('seed-badge');
const coverageLabel = $('coverage');
const exportBtn = $('export') as HTMLButtonElement;
const undoBtn = $('undo') as HTMLButtonElement;
const toggleOverlay = $('toggle-overlay') as HTMLInputElement;
const toast = $('toast');

let toastTimer: ReturnType<typeof setTimeout> | null = null;
function showToast(message: string): void {
  toast.textContent = message;
  toast.classList.add('visible');
  if (toastTimer) clearTimeout(toastTimer);
  toastTimer = setTimeout(() => toast.classList.remove('visible'), 2500);
}

const scheduler = new ExpansionScheduler(
  (alpha, pc) => {
    if (!state.sessionId) return Promise.reject(new Error('no session'));
    return client.getExpansion(state.sessionId, alpha, pc);
  },
  (_key, resp) => {
    const mask = rleDecode(resp.mask);
    state = applyExpansion(state, resp.stats, mask);
    paintOverlay();
    coverageLabel.textContent =
      `${(resp.stats.coverage * 100).toFixed(2)}% labeled (${resp.stats.expanded_count} px)`;
    exportBtn.disabled = !canExport(state);
  },
  (_key, err) => {
    if (err instanceof ApiError && err.status === 409) {
      showToast('draw seeds first');
    } else {
      showToast(`expansion failed: ${(err as Error).message}`);
    }
  },
);

function refreshExpansion(): void {
  if (canExpand(state)) scheduler.request(state.alpha, state.pc);
}

// ---------------------------------------------------------------------------
// canvas rendering

function paintOverlay(): void {
  const ctx = overlayCanvas.getContext('2d');
  if (!ctx) return;
  ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
  if (!state.showOverlay || !state.mask) return;
  const rgba = maskToRgba(state.mask, state.width, state.height);
  ctx.putImageData(new ImageData(rgba, state.width, state.height), 0, 0);
}

function paintVectors(): void {
  const ctx = vectorCanvas.getContext('2d');
  if (!ctx) return;
  ctx.clearRect(0, 0, vectorCanvas.width, vectorCanvas.height);
  if (!state.showSeeds) return;
  ctx.lineWidth = 1.5;
  for (const ring of state.polygons) {
    ctx.strokeStyle = '#ffe100';
    ctx.fillStyle = 'rgba(255, 225, 0, 0.25)';
    ctx.beginPath();
    ring.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
    ctx.closePath();
    ctx.fill();
    ctx.stroke();
  }
  if (state.draft.length > 0) {
    ctx.strokeStyle = '#00e1ff';
    ctx.beginPath();
    state.draft.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
    ctx.stroke();
    for (const [x, y] of state.draft) {
      ctx.fillStyle = '#00e1ff';
      ctx.fillRect(x - 1.5, y - 1.5, 3, 3);
    }
  }
}

function canvasCoords(ev: MouseEvent): [number, number] {
  const rect = vectorCanvas.getBoundingClientRect();
  const x = ((ev.clientX - rect.left) / rect.width) * state.width;
  const y = ((ev.clientY - rect.top) / rect.height) * state.height;
  return [Math.round(x), Math.round(y)];
}

// ---------------------------------------------------------------------------
// seed editing

async function pushSeeds(): Promise<void> {
  if (!state.sessionId) return;
  try {
    const count = await client.putSeeds(state.sessionId, seedsGeoJson(state));
    seedBadge.textContent = `${count} seed px`;
    if (state.polygons.length === 0) {
      state = clearExpansion(state);
      paintOverlay();
      coverageLabel.textContent = '';
      exportBtn.disabled = true;
    } else {
      refreshExpansion();
    }
  } catch (err) {
    showToast(`seed upload failed: ${(err as Error).message}`);
  }
}

function finishRing(): void {
  const result = closeRing(state);
  state = result.state;
  paintVectors();
  if (result.committed) {
    void pushSeeds();
  } else {
    showToast('a seed polygon needs at least 3 vertices');
  }
}

vectorCanvas.addEventListener('click', (ev) => {
  if (!state.sessionId) return;
  const [x, y] = canvasCoords(ev);
  state = addVertex(state, x, y);
  paintVectors();
});

vectorCanvas.addEventListener('dblclick', (ev) => {
  ev.preventDefault();
  if (!state.sessionId) return;
  finishRing();
});

undoBtn.addEventListener('click', () => {
  state = undoRing(state);
  paintVectors();
  void pushSeeds();
});

document.addEventListener('keydown', (ev) => {
  if (ev.key === 'Enter' && state.draft.length > 0) {
    finishRing();
  } else if (ev.key === 'Escape' && state.draft.length > 0) {
    state = { ...state, draft: [] };
    paintVectors();
  } else if (ev.key === 'u') {
    state = undoRing(state);
    paintVectors();
    void pushSeeds();
  }
});

// ---------------------------------------------------------------------------
// controls

alphaSlider.min = String(ALPHA_MIN);
alphaSlider.max = String(ALPHA_MAX);
alphaSlider.step = '0.001';
alphaSlider.value = String(state.alpha);
alphaLabel.textContent = state.alpha.toFixed(3);

alphaSlider.addEventListener('input', () => {
  state = setAlpha(state, Number(alphaSlider.value));
  alphaLabel.textContent = state.alpha.toFixed(3);
  refreshExpansion();
});

for (let pc = PC_MIN; pc <= PC_MAX; pc++) {
  const opt = document.createElement('option');
  opt.value = String(pc);
  opt.textContent = `PC=${pc}`;
  if (pc === state.pc) opt.selected = true;
  pcSelect.appendChild(opt);
}
pcSelect.addEventListener('change', () => {
  state = setPc(state, Number(pcSelect.value));
  refreshExpansion();
});

toggleOverlay.addEventListener('change', () => {
  state = { ...state, showOverlay: toggleOverlay.checked };
  paintOverlay();
});

exportBtn.addEventListener('click', async () => {
  if (!state.sessionId) return;
  try {
    const buf = await client.exportLabels(state.sessionId, state.alpha, state.pc);
    const url = URL.createObjectURL(new Blob([buf], { type: 'application/zip' }));
    const a = document.createElement('a');
    a.href = url;
    a.download = exportFilename(state);
    a.click();
    URL.revokeObjectURL(url);
  } catch (err) {
    showToast(`export failed: ${(err as Error).message}`);
  }
});

// ---------------------------------------------------------------------------
// session open

($('open-form') as HTMLFormElement).addEventListener('submit', async (ev) => {
  ev.preventDefault();
  const prePath = ($('pre-path') as HTMLInputElement).value.trim();
  const postPath = ($('post-path') as HTMLInputElement).value.trim();
  try {
    const info = await client.createSession({ pre_path: prePath, post_path: postPath });
    state = openSession(state, info.session_id, info.width, info.height);
    for (const canvas of [overlayCanvas, vectorCanvas]) {
      canvas.width = info.width;
      canvas.height = info.height;
    }
    baseImg.src = client.previewUrl(info.session_id, 'post', state.alpha, state.pc);
    seedBadge.textContent = '0 seed px';
    coverageLabel.textContent = '';
    exportBtn.disabled = true;
    paintOverlay();
    paintVectors();
  } catch (err) {
    showToast(`open failed: ${(err as Error).message}`);
  }
});
