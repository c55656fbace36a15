// Annotation state and its pure transitions. Every UI mutation goes through
// these functions so tests can drive the exact flows the DOM layer uses.

import type { ExpansionStats, Point, Ring } from './types.js';

export const ALPHA_MIN = 0.5;
export const ALPHA_MAX = 0.999;
export const PC_MIN = 1;
export const PC_MAX = 8;
export const MIN_RING_VERTICES = 3;

export interface AnnotationState {
  sessionId: string | null;
  width: number;
  height: number;
  polygons: Ring[];
  draft: Point[]; // ring being drawn
  alpha: number;
  pc: number;
  stats: ExpansionStats | null;
  mask: Uint8Array | null; // last decoded expansion
  showOverlay: boolean;
  showSeeds: boolean;
}

export function initialState(): AnnotationState {
  return {
    sessionId: null,
    width: 0,
    height: 0,
    polygons: [],
    draft: [],
    alpha: 0.95,
    pc: 2,
    stats: null,
    mask: null,
    showOverlay: true,
    showSeeds: true,
  };
}

export function openSession(s: AnnotationState, id: string, width: number,
                            height: number): AnnotationState {
  return { ...initialState(), sessionId: id, width, height, alpha: s.alpha, pc: s.pc };
}

export function addVertex(s: AnnotationState, x: number, y: number): AnnotationState {
  return { ...s, draft: [...s.draft, [x, y]] };
}

export interface CloseResult {
  state: AnnotationState;
  /** true when a ring was committed; false = draft discarded (< 3 vertices). */
  committed: boolean;
}

export function closeRing(s: AnnotationState): CloseResult {
  if (s.draft.length < MIN_RING_VERTICES) {
    return { state: { ...s, draft: [] }, committed: false };
  }
  return {
    state: { ...s, polygons: [...s.polygons, s.draft], draft: [] },
    committed: true,
  };
}

export function undoRing(s: AnnotationState): AnnotationState {
  if (s.draft.length > 0) return { ...s, draft: [] };
  return { ...s, polygons: s.polygons.slice(0, -1) };
}

export function setAlpha(s: AnnotationState, alpha: number): AnnotationState {
  const clamped = Math.min(ALPHA_MAX, Math.max(ALPHA_MIN, alpha));
  return { ...s, alpha: clamped };
}

export function setPc(s: AnnotationState, pc: number): AnnotationState {
  const clamped = Math.min(PC_MAX, Math.max(PC_MIN, Math.round(pc)));
  return { ...s, pc: clamped };
}

export function applyExpansion(s: AnnotationState, stats: ExpansionStats,
                               mask: Uint8Array): AnnotationState {
  return { ...s, stats, mask };
}

export function clearExpansion(s: AnnotationState): AnnotationState {
  return { ...s, stats: null, mask: null };
}

export function canExpand(s: AnnotationState): boolean {
  return s.sessionId !== null && s.polygons.length > 0;
}

export function canExport(s: AnnotationState): boolean {
  return canExpand(s) && s.stats !== null;
}

/** GeoJSON FeatureCollection for PUT /seeds; rings are closed explicitly. */
export function seedsGeoJson(s: AnnotationState): unknown {
  return {
    type: 'FeatureCollection',
    features: s.polygons.map((ring) => ({
      type: 'Feature',
      properties: {},
      geometry: { type: 'Polygon', coordinates: [[...ring, ring[0]]] },
    })),
  };
}

export function exportFilename(s: AnnotationState): string {
  return `labels_${s.sessionId}_a${s.alpha}_pc${s.pc}.zip`;
}
