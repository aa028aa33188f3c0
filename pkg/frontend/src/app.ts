import { ApiClient } from "./api";
import { DetailView } from "./detail";
import { FlagListView } from "./flagList";

/** Two-screen reviewer app: ranked flag list and per-point drilldown.
 * Hash routes: #/flags/<date> and #/detail/<region>/<date>. The server is
 * the source of truth; the app holds no state beyond the current view. */

export interface AppHandles {
  client: ApiClient;
  navigate: (hash: string) => void;
}

export function mountApp(root: HTMLElement, baseUrl = ""): AppHandles {
  const client = new ApiClient(baseUrl);

  const bar = document.createElement("div");
  bar.className = "topbar";
  const title = document.createElement("h1");
  title.textContent = "streamflag review";
  const dateInput = document.createElement("input");
  dateInput.type = "date";
  dateInput.className = "date-input";
  const go = document.createElement("button");
  go.className = "go";
  go.textContent = "Load";
  const retrain = document.createElement("button");
  retrain.className = "retrain";
  retrain.textContent = "Retrain";
  const retrainStatus = document.createElement("span");
  retrainStatus.className = "retrain-status";
  bar.append(title, dateInput, go, retrain, retrainStatus);

  const main = document.createElement("div");
  main.className = "view";
  root.replaceChildren(bar, main);

  // Render once per hash: assigning location.hash also fires an async
  // hashchange, which would otherwise re-render (and re-fetch) every view.
  let rendered: string | null = null;
  const navigate = (hash: string) => {
    if (window.location.hash === hash) {
      route(true);
      return;
    }
    window.location.hash = hash;
    route();
  };

  const list = new FlagListView(main, client, (flag) =>
    navigate(`#/detail/${flag.region_code}/${flag.date}`),
  );
  const detail = new DetailView(main, client, () => {
    const date = dateInput.value;
    navigate(date ? `#/flags/${date}` : "#/");
  });

  go.addEventListener("click", () => {
    if (dateInput.value) navigate(`#/flags/${dateInput.value}`);
  });

  retrain.addEventListener("click", () => {
    if (retrain.disabled) return;
    retrain.disabled = true;
    retrainStatus.textContent = "requesting…";
    void client
      .retrain()
      .then((res) => {
        retrainStatus.textContent = `retrain ${res.status}`;
      })
      .catch((err) => {
        retrainStatus.textContent = `failed: ${err instanceof Error ? err.message : err}`;
      })
      .finally(() => {
        retrain.disabled = false;
      });
  });

  function route(force = false): void {
    const hash = window.location.hash;
    if (!force && hash === rendered) return;
    rendered = hash;
    const flagsMatch = hash.match(/^#\/flags\/(\d{4}-\d{2}-\d{2})$/);
    if (flagsMatch && flagsMatch[1]) {
      dateInput.value = flagsMatch[1];
      void list.show(flagsMatch[1]);
      return;
    }
    const detailMatch = hash.match(/^#\/detail\/([^/]+)\/(\d{4}-\d{2}-\d{2})$/);
    if (detailMatch && detailMatch[1] && detailMatch[2]) {
      void detail.show(detailMatch[1], detailMatch[2]);
      return;
    }
    // default: newest scored date from /health
    void client
      .health()
      .then((health) => {
        if (health.last_scored) navigate(`#/flags/${health.last_scored}`);
        else main.replaceChildren(emptyMessage("No days scored yet."));
      })
      .catch(() => {
        main.replaceChildren(emptyMessage("API unreachable."));
      });
  }

  function emptyMessage(text: string): HTMLElement {
    const p = document.createElement("p");
    p.className = "empty-state";
    p.textContent = text;
    return p;
  }

  window.addEventListener("hashchange", () => route());
  route();
  return { client, navigate };
}

declare global {
  interface Window {
    STREAMFLAG_API?: string;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountApp(document.getElementById("app") as HTMLElement, window.STREAMFLAG_API ?? "");
}
