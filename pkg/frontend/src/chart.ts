import type { DetailResponse } from "./types";

/** Canvas time-series chart: raw/imputed/corrected traces, regime boundary
 * markers, the flagged day, wheel zoom, drag pan, and a 7-day-average
 * overlay. Pure presentation; values are drawn exactly as received. */

const TRACES: { key: "raw" | "imputed" | "corrected"; color: string }[] = [
  { key: "raw", color: "#8a8a8a" },
  { key: "imputed", color: "#7b52ab" },
  { key: "corrected", color: "#2b6cb0" },
];

interface ViewState {
  start: number; // index of first visible point
  end: number; // exclusive
  showAverage: boolean;
}

export class StreamChart {
  private view: ViewState;
  private dragging: number | null = null;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly detail: DetailResponse,
  ) {
    this.view = { start: 0, end: detail.dates.length, showAverage: false };
    canvas.addEventListener("wheel", (ev) => this.onWheel(ev), { passive: false });
    canvas.addEventListener("mousedown", (ev) => {
      this.dragging = ev.clientX;
    });
    canvas.addEventListener("mousemove", (ev) => this.onDrag(ev));
    window.addEventListener("mouseup", () => {
      this.dragging = null;
    });
    this.render();
  }

  toggleAverage(show: boolean): void {
    this.view.showAverage = show;
    this.render();
  }

  private onWheel(ev: WheelEvent): void {
    ev.preventDefault();
    const { start, end } = this.view;
    const span = end - start;
    const factor = ev.deltaY > 0 ? 1.25 : 0.8;
    const next = Math.max(7, Math.min(this.detail.dates.length, Math.round(span * factor)));
    const focus = start + (ev.offsetX / Math.max(this.canvas.clientWidth, 1)) * span;
    let s = Math.round(focus - (next * (focus - start)) / span);
    s = Math.max(0, Math.min(s, this.detail.dates.length - next));
    this.view.start = s;
    this.view.end = s + next;
    this.render();
  }

  private onDrag(ev: MouseEvent): void {
    if (this.dragging === null) return;
    const span = this.view.end - this.view.start;
    const shift = Math.round(
      ((this.dragging - ev.clientX) / Math.max(this.canvas.clientWidth, 1)) * span,
    );
    if (shift === 0) return;
    this.dragging = ev.clientX;
    let s = this.view.start + shift;
    s = Math.max(0, Math.min(s, this.detail.dates.length - span));
    this.view.start = s;
    this.view.end = s + span;
    this.render();
  }

  private rolling7(values: (number | null)[]): (number | null)[] {
    const out: (number | null)[] = values.map(() => null);
    for (let i = 0; i < values.length; i++) {
      let total = 0;
      let count = 0;
      for (let j = Math.max(0, i - 6); j <= i; j++) {
        const v = values[j];
        if (v !== null && v !== undefined) {
          total += v;
          count += 1;
        }
      }
      if (count > 0) out[i] = total / count;
    }
    return out;
  }

  render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return; // headless test environments have no 2D context
    const { width, height } = this.canvas;
    const { start, end } = this.view;
    ctx.clearRect(0, 0, width, height);

    const visible: number[] = [];
    for (const { key } of TRACES) {
      for (let i = start; i < end; i++) {
        const v = this.detail[key][i];
        if (v !== null && v !== undefined) visible.push(v);
      }
    }
    if (!visible.length) return;
    const lo = Math.min(...visible, 0);
    const hi = Math.max(...visible) * 1.05 || 1;
    const x = (i: number) => ((i - start) / Math.max(end - start - 1, 1)) * (width - 20) + 10;
    const y = (v: number) => height - 18 - ((v - lo) / (hi - lo)) * (height - 30);

    for (const iso of this.detail.regime_starts) {
      const idx = this.detail.dates.indexOf(iso);
      if (idx >= start && idx < end) {
        ctx.strokeStyle = "#bbb";
        ctx.setLineDash([4, 4]);
        ctx.beginPath();
        ctx.moveTo(x(idx), 10);
        ctx.lineTo(x(idx), height - 18);
        ctx.stroke();
        ctx.setLineDash([]);
      }
    }

    const drawTrace = (values: (number | null)[], color: string, widthPx: number) => {
      ctx.strokeStyle = color;
      ctx.lineWidth = widthPx;
      ctx.beginPath();
      let pen = false;
      for (let i = start; i < end; i++) {
        const v = values[i];
        if (v === null || v === undefined) {
          pen = false;
          continue;
        }
        if (pen) ctx.lineTo(x(i), y(v));
        else ctx.moveTo(x(i), y(v));
        pen = true;
      }
      ctx.stroke();
    };

    for (const { key, color } of TRACES) drawTrace(this.detail[key], color, 1);
    if (this.view.showAverage) drawTrace(this.rolling7(this.detail.raw), "#d97706", 2);

    if (this.detail.flag) {
      const idx = this.detail.dates.indexOf(this.detail.flag.date);
      if (idx >= start && idx < end) {
        ctx.strokeStyle = "#c0392b";
        ctx.lineWidth = 1.5;
        ctx.beginPath();
        ctx.moveTo(x(idx), 10);
        ctx.lineTo(x(idx), height - 18);
        ctx.stroke();
      }
    }
  }
}
