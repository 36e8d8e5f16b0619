// Browser entry point: the dashboard talks to the API that served it.
import { mount } from "./app.js";

const app = mount("");
void app.start();
