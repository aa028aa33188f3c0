import { ApiClient, ApiError } from "./api";
import { StreamChart } from "./chart";
import type { DetailResponse, FlagJson } from "./types";

/** Per-point drilldown: the calculation chart plus the score breakdown and
 * the review form. Numbers render straight from the payload; the optimistic
 * review update rolls back if the server rejects the write. */

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function statRow(table: HTMLTableElement, label: string, value: string, key?: string): void {
  const row = el("tr");
  row.appendChild(el("th", undefined, label));
  const cell = el("td", undefined, value);
  if (key) cell.dataset.stat = key;
  row.appendChild(cell);
  table.appendChild(row);
}

export class DetailView {
  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
    private readonly onBack: () => void,
  ) {}

  async show(region: string, date: string): Promise<void> {
    this.root.replaceChildren(el("p", "loading", `Loading ${region} @ ${date}…`));
    let detail: DetailResponse;
    try {
      detail = await this.client.detail(region, date);
    } catch (err) {
      const detailText =
        err instanceof ApiError && err.status === 404
          ? `Unknown stream ${region} (404).`
          : `Could not load detail: ${err instanceof Error ? err.message : err}`;
      const box = el("div", "error-state");
      box.appendChild(el("p", undefined, detailText));
      const retry = el("button", "retry", "Retry");
      retry.addEventListener("click", () => void this.show(region, date));
      box.appendChild(retry);
      this.root.replaceChildren(box);
      return;
    }
    this.render(detail, region, date);
  }

  private render(detail: DetailResponse, region: string, date: string): void {
    const page = el("div", "detail-page");
    const back = el("button", "back", "← Flag list");
    back.addEventListener("click", () => this.onBack());
    page.appendChild(back);
    page.appendChild(el("h2", undefined, `${region} (${detail.region_level}) — ${date}`));

    const warnings: string[] = [];
    if (!detail.flag) warnings.push("no flag recorded for this date; score panel unavailable");
    if (detail.short_series) warnings.push("short-series stream: labels only, no model");
    if (!detail.weekday_factors) warnings.push("weekday factors missing from payload");
    if (warnings.length) {
      page.appendChild(el("p", "degraded", `Partial data: ${warnings.join("; ")}.`));
    }

    const canvas = el("canvas", "stream-chart") as HTMLCanvasElement;
    canvas.width = 860;
    canvas.height = 300;
    page.appendChild(canvas);
    const chart = new StreamChart(canvas, detail);

    const controls = el("div", "chart-controls");
    const toggle = el("label", undefined, " 7-day average");
    const box = el("input") as HTMLInputElement;
    box.type = "checkbox";
    box.className = "avg-toggle";
    box.addEventListener("change", () => chart.toggleAverage(box.checked));
    toggle.prepend(box);
    controls.appendChild(toggle);
    controls.appendChild(el("span", "hint", "scroll to zoom, drag to pan"));
    page.appendChild(controls);

    const stats = el("table", "score-breakdown") as HTMLTableElement;
    if (detail.flag) {
      const flag = detail.flag;
      stats.dataset.k = String(flag.k);
      stats.dataset.pValue = String(flag.p_value);
      stats.dataset.rankScore = String(flag.rank_score);
      statRow(stats, "observed", flag.observed === null ? "missing" : String(flag.observed));
      statRow(stats, "weekday-corrected", flag.observed_corrected.toFixed(3));
      statRow(stats, "AR prediction", flag.predicted.toFixed(3), "predicted");
      statRow(stats, "test statistic k", flag.k.toExponential(6), "k");
      statRow(stats, "empirical p", flag.p_value.toFixed(6), "p");
      statRow(stats, "rank score |2p−1|", flag.rank_score.toFixed(6), "rank-score");
      statRow(stats, "annotations", flag.annotations.join(", ") || "none");
      page.appendChild(stats);
      page.appendChild(this.reviewForm(flag));
    } else {
      page.appendChild(stats);
    }

    if (detail.weekday_factors) {
      page.appendChild(
        el(
          "p",
          "model-info",
          `weekday factors: ${detail.weekday_factors.map((f) => f.toFixed(3)).join(", ")}`,
        ),
      );
    }
    if (detail.ar_weights) {
      page.appendChild(
        el(
          "p",
          "model-info",
          `AR weights: ${detail.ar_weights.map((w) => w.toFixed(4)).join(", ")}`,
        ),
      );
    }
    this.root.replaceChildren(page);
  }

  private reviewForm(flag: FlagJson): HTMLElement {
    const form = el("div", "review-form");
    const checkbox = el("input") as HTMLInputElement;
    checkbox.type = "checkbox";
    checkbox.className = "reviewed-box";
    checkbox.checked = flag.reviewed;
    const label = el("label", undefined, " mark reviewed");
    label.prepend(checkbox);
    const note = el("input") as HTMLInputElement;
    note.type = "text";
    note.className = "note-input";
    note.placeholder = "reviewer note";
    note.value = flag.reviewer_note ?? "";
    const save = el("button", "save-review", "Save review");
    const status = el("span", "review-status", "");
    form.append(label, note, save, status);

    save.addEventListener("click", () => {
      if (save.disabled) return; // double-click safe
      const previous = { reviewed: flag.reviewed, note: flag.reviewer_note };
      const desired = { reviewed: checkbox.checked, note: note.value || null };
      save.disabled = true;
      status.textContent = "saving…";
      flag.reviewed = desired.reviewed;
      flag.reviewer_note = desired.note;
      void this.client
        .review(flag.region_code, flag.date, desired)
        .then((res) => {
          flag.reviewed = res.flag.reviewed;
          flag.reviewer_note = res.flag.reviewer_note;
          status.textContent = "saved";
        })
        .catch((err) => {
          flag.reviewed = previous.reviewed;
          flag.reviewer_note = previous.note;
          checkbox.checked = previous.reviewed;
          note.value = previous.note ?? "";
          status.textContent = `rejected: ${err instanceof Error ? err.message : err}`;
        })
        .finally(() => {
          save.disabled = false;
        });
    });
    return form;
  }
}
