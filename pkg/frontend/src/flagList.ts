import { ApiClient, ApiError } from "./api";
import type { FlagJson } from "./types";

/** Ranked flag table for one date. Rows appear exactly in API order; the
 * dashboard never re-sorts or re-scores. */

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

const fmt = (v: number, digits = 4) => v.toFixed(digits);

export class FlagListView {
  constructor(
    private readonly root: HTMLElement,
    private readonly client: ApiClient,
    private readonly onSelect: (flag: FlagJson) => void,
  ) {}

  async show(date: string): Promise<void> {
    this.root.replaceChildren(el("p", "loading", `Loading flags for ${date}…`));
    let flags: FlagJson[];
    try {
      const body = await this.client.flags(date);
      flags = body.flags;
    } catch (err) {
      this.renderError(date, err);
      return;
    }
    if (!flags.length) {
      this.root.replaceChildren(el("p", "empty-state", `No flags for ${date}.`));
      return;
    }
    this.renderTable(date, flags);
  }

  private renderError(date: string, err: unknown): void {
    const status = err instanceof ApiError ? err.status : 0;
    const detail = err instanceof Error ? err.message : String(err);
    const box = el("div", "error-state");
    box.appendChild(
      el(
        "p",
        undefined,
        status === 404
          ? `No flag list recorded for ${date} (404).`
          : `Could not load flags: ${detail}`,
      ),
    );
    const retry = el("button", "retry", "Retry");
    retry.addEventListener("click", () => void this.show(date));
    box.appendChild(retry);
    this.root.replaceChildren(box);
  }

  private renderTable(date: string, flags: FlagJson[]): void {
    const table = el("table", "flag-table");
    table.dataset.date = date;
    const head = el("tr");
    for (const col of ["#", "Region", "|2p−1|", "p", "k", "Annotations", "Reviewed"]) {
      head.appendChild(el("th", undefined, col));
    }
    table.appendChild(head);
    for (const flag of flags) {
      const row = el("tr", "flag-row");
      row.dataset.region = flag.region_code;
      row.dataset.rank = String(flag.rank);
      row.dataset.rankScore = String(flag.rank_score);
      row.appendChild(el("td", undefined, String(flag.rank)));
      row.appendChild(el("td", undefined, `${flag.region_code} (${flag.region_level})`));
      row.appendChild(el("td", "score", fmt(flag.rank_score)));
      row.appendChild(el("td", undefined, fmt(flag.p_value)));
      row.appendChild(el("td", undefined, flag.k.toExponential(3)));
      row.appendChild(el("td", "annotations", flag.annotations.join(", ")));
      row.appendChild(el("td", "reviewed", flag.reviewed ? "✓" : ""));
      row.addEventListener("click", () => this.onSelect(flag));
      table.appendChild(row);
    }
    this.root.replaceChildren(table);
  }
}
