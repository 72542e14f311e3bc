/**
 * Admin view: the unblinded aggregate table (model names, counts, two-decimal
 * percentages) and a delimited-text export that re-parses to the same values.
 */
import { Aggregate, ApiClient, ApiError } from './api';
import { aggregateToCsv, sortedModels } from './export';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [name, value] of Object.entries(attrs)) node.setAttribute(name, value);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderAggregateTable(aggregate: Aggregate): HTMLTableElement {
  const table = el('table', { class: 'aggregate', 'data-testid': 'aggregate-table' });
  const head = el('tr');
  head.append(el('th', {}, 'Model'), el('th', {}, 'Votes'), el('th', {}, 'Percentage'));
  table.append(head);
  for (const model of sortedModels(aggregate)) {
    const row = el('tr', { 'data-model': model });
    row.append(
      el('td', {}, model),
      el('td', { 'data-testid': `votes-${model}` }, String(aggregate.counts[model])),
      el(
        'td',
        { 'data-testid': `pct-${model}` },
        (aggregate.percentages[model] ?? 0).toFixed(2),
      ),
    );
    table.append(row);
  }
  const totalRow = el('tr', { class: 'total' });
  totalRow.append(
    el('td', {}, 'Total'),
    el('td', { 'data-testid': 'total-votes' }, String(aggregate.total)),
    el('td', {}, ''),
  );
  table.append(totalRow);
  return table;
}

function triggerDownload(filename: string, text: string): void {
  const blob = new Blob([text], { type: 'text/csv;charset=utf-8' });
  const url = URL.createObjectURL(blob);
  const anchor = el('a', { href: url, download: filename });
  document.body.append(anchor);
  anchor.click();
  anchor.remove();
  URL.revokeObjectURL(url);
}

export async function mountAdmin(
  container: HTMLElement,
  client: ApiClient,
  sessionId: string,
  adminSecret: string | null,
): Promise<Aggregate | null> {
  if (!adminSecret) {
    const denied = el('div', { class: 'denied', 'data-testid': 'access-denied' });
    denied.append(
      el('h1', {}, 'Access denied'),
      el('p', {}, 'The admin view needs the shared secret (add ?secret=… to the URL).'),
    );
    container.replaceChildren(denied);
    return null;
  }

  container.replaceChildren(el('p', { class: 'status' }, 'Loading aggregate…'));
  let aggregate: Aggregate;
  try {
    aggregate = await client.fetchAggregate(sessionId, adminSecret);
  } catch (error) {
    const denied = el('div', { class: 'denied', 'data-testid': 'access-denied' });
    const unauthorized = error instanceof ApiError && error.status === 403;
    denied.append(
      el('h1', {}, unauthorized ? 'Access denied' : 'Aggregate unavailable'),
      el('p', {}, error instanceof Error ? error.message : String(error)),
    );
    container.replaceChildren(denied);
    return null;
  }

  const root = el('div', { class: 'admin', 'data-testid': 'admin-screen' });
  root.append(el('h1', {}, `Results — session ${sessionId}`));
  root.append(renderAggregateTable(aggregate));
  const exportButton = el('button', { 'data-testid': 'export' }, 'Export table (CSV)');
  exportButton.addEventListener('click', () =>
    triggerDownload(`aggregate-${sessionId}.csv`, aggregateToCsv(aggregate)),
  );
  root.append(exportButton);
  container.replaceChildren(root);
  return aggregate;
}
