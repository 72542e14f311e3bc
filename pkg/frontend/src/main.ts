/**
 * Entry point. Routes by URL parameters:
 *   ?session=<id>               rater flow
 *   ?session=<id>&view=admin&secret=<s>   admin aggregate table
 *   ?api=<base url>             service address (default http://127.0.0.1:8731)
 */
import './styles.css';
import { ApiClient } from './api';
import { mountAdmin } from './admin';
import { mountRater } from './rater';

const DEFAULT_API = 'http://127.0.0.1:8731';

function renderLanding(container: HTMLElement): void {
  container.innerHTML = `
    <div class="landing">
      <h1>शीर्षक मूल्याङ्कन — headline evaluation</h1>
      <p>Open a rating session with <code>?session=&lt;id&gt;</code>.
         The admin table is at <code>?session=&lt;id&gt;&amp;view=admin&amp;secret=&lt;secret&gt;</code>.</p>
    </div>`;
}

export async function start(root: HTMLElement, location: Location, storage: Storage): Promise<void> {
  const params = new URLSearchParams(location.search);
  const sessionId = params.get('session');
  const client = new ApiClient(params.get('api') ?? DEFAULT_API);
  if (!sessionId) {
    renderLanding(root);
    return;
  }
  if (params.get('view') === 'admin') {
    await mountAdmin(root, client, sessionId, params.get('secret'));
    return;
  }
  await mountRater(root, client, sessionId, storage);
}

const root = document.getElementById('app');
if (root) {
  void start(root, window.location, window.localStorage);
}
