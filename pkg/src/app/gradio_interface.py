"""
Gradio dashboard for toy populations, subspace similarity and quick experiments
"""
import logging
import os
import sys
from typing import Tuple

import gradio as gr
import numpy as np
import pandas as pd

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models.experiment import ExperimentConfig, MethodSpec
from models.toy_spec import PERTURB_TARGETS, PopulationSpec, ToySpec
from services.experiment_runner import run_toy_experiment
from services.metrics import subject_similarity_report
from services.report import summarize
from services.toy_generator import gen_population
from utils.config import load_method_grids, load_toy_defaults
from utils.numerics import principal_angle_similarity

logger = logging.getLogger(__name__)

QUICK_GRIDS = {
    "csp": [{}],
    "covcsp": {"lam": [0, 0.5, 0.9]},
    "mtcsp": {"lambda1": [1e-2, 1], "lambda2": [1e-2, 1], "options": {"max_iterations": 30}},
    "sscsp": {"l": [2, 5], "nu": [2, 5]},
}


class MultiSubjectCspInterface:
    """Gradio interface over the toy generator, similarity metrics and the experiment runner"""

    def __init__(self, build_ui: bool = True):
        defaults = load_toy_defaults()
        self.toy_spec = ToySpec.from_dict(defaults["toy_spec"])
        self.records = []
        self.truth = None
        self.interface = self._create_interface() if build_ui else None

    def _create_interface(self):
        with gr.Blocks(title="Multi-subject CSP", theme=gr.themes.Soft()) as interface:
            gr.HTML("<h1>🧠 Multi-subject CSP transfer</h1>")
            with gr.Tab("🧪 Toy population"):
                self._create_population_tab()
            with gr.Tab("📐 Subspace similarity"):
                self._create_similarity_tab()
            with gr.Tab("📊 Quick experiment"):
                self._create_experiment_tab()
        return interface

    def _create_population_tab(self):
        with gr.Row():
            with gr.Column():
                n_subjects = gr.Slider(2, 10, value=5, step=1, label="Subjects")
                eta = gr.Number(value=0.0, label="Perturbation weight eta", minimum=0)
                perturb = gr.Dropdown(list(PERTURB_TARGETS), value="A", label="Perturbed mixing matrix")
                seed = gr.Number(value=0, precision=0, label="Seed")
                trials = gr.Slider(10, 100, value=50, step=10, label="Trials per class")
                generate_btn = gr.Button("🎲 Generate", variant="primary")
            with gr.Column():
                status = gr.Markdown("No population generated")
                table = gr.Dataframe(label="Ground-truth similarity to subject 1")
        generate_btn.click(fn=self.generate_population, inputs=[n_subjects, eta, perturb, seed, trials],
                           outputs=[status, table])

    def _create_similarity_tab(self):
        with gr.Row():
            kind = gr.Radio(["discriminative", "nonstationary"], value="discriminative", label="Subspace")
            dim = gr.Slider(1, 10, value=6, step=1, label="Dimension")
            similarity_btn = gr.Button("🔍 Compute", variant="primary")
        status = gr.Markdown()
        table = gr.Dataframe(label="Pairwise similarity")
        similarity_btn.click(fn=self.similarity_report, inputs=[kind, dim], outputs=[status, table])

    def _create_experiment_tab(self):
        with gr.Row():
            with gr.Column():
                methods = gr.CheckboxGroup(list(QUICK_GRIDS), value=["csp", "covcsp", "sscsp"], label="Methods")
                eta = gr.Number(value=0.0, label="eta", minimum=0)
                perturb = gr.Dropdown(list(PERTURB_TARGETS), value="A", label="Scenario")
                reps = gr.Slider(1, 10, value=1, step=1, label="Repetitions")
                run_btn = gr.Button("▶️ Run", variant="primary")
            with gr.Column():
                status = gr.Markdown()
                summary = gr.Dataframe(label="Summary")
                results = gr.Dataframe(label="Results")
        run_btn.click(fn=self.quick_experiment, inputs=[methods, eta, perturb, reps],
                      outputs=[status, summary, results])

    def generate_population(self, n_subjects, eta, perturb, seed, trials_per_class=50) -> Tuple[str, pd.DataFrame]:
        """Generate a toy population and compare every subject's true subspaces with subject 1"""
        try:
            spec = ToySpec.from_dict({**self.toy_spec.to_dict(), 'trials_per_class': int(trials_per_class)})
            pop = PopulationSpec(int(n_subjects), float(eta), perturb, int(seed))
            self.records, self.truth = gen_population(spec, pop)
            rows = [{
                'subject': sid,
                'discriminative': principal_angle_similarity(self.truth.discriminative_span(0),
                                                             self.truth.discriminative_span(i)),
                'nonstationary': principal_angle_similarity(self.truth.nonstationary_span(0),
                                                            self.truth.nonstationary_span(i)),
            } for i, sid in enumerate(self.truth.subject_ids)]
            return f"✅ Generated {len(self.records)} subjects", pd.DataFrame(rows).round(4)
        except Exception as e:
            logger.exception("Population generation failed")
            return f"❌ Error generating population: {e}", pd.DataFrame()

    def similarity_report(self, kind, dim) -> Tuple[str, pd.DataFrame]:
        if len(self.records) < 2:
            return "⚠️ Generate a population first", pd.DataFrame()
        try:
            report = subject_similarity_report(self.records, kind, int(dim))
            return (f"Mean {kind} similarity (d={report.dimension}): {report.mean:.3f}",
                    report.to_frame().round(3).reset_index(names="subject"))
        except Exception as e:
            logger.exception("Similarity report failed")
            return f"❌ Error computing similarity: {e}", pd.DataFrame()

    def quick_experiment(self, methods, eta, perturb, reps) -> Tuple[str, pd.DataFrame, pd.DataFrame]:
        """Small toy sweep with reduced grids"""
        if not methods:
            return "⚠️ Select at least one method", pd.DataFrame(), pd.DataFrame()
        try:
            grids = load_method_grids()
            config = ExperimentConfig(
                toy_spec=ToySpec.from_dict({**self.toy_spec.to_dict(), 'trials_per_class': 50}),
                population=PopulationSpec(4, float(eta), perturb, 0),
                methods=[MethodSpec.from_definition(m, QUICK_GRIDS[m], grids) for m in methods],
                repetitions=int(reps),
            )
            table = run_toy_experiment(config)
            summary = summarize(table).reset_index()
            best = summary.loc[np.argmax(summary['mean'].to_numpy()), 'method']
            return (f"✅ {len(table)} runs finished; best mean accuracy: {best}",
                    summary.round(4), table.to_frame())
        except Exception as e:
            logger.exception("Quick experiment failed")
            return f"❌ Error running experiment: {e}", pd.DataFrame(), pd.DataFrame()

    def launch(self, share=False, debug=False):
        """Launch the Gradio interface"""
        if self.interface is None:
            self.interface = self._create_interface()
        return self.interface.launch(
            share=share,
            debug=debug,
            server_name="0.0.0.0",
            server_port=7860,
            show_error=True
        )
