use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor, Var};

fn same_shape<T: Element>(a: &Var<'_, T>, b: &Var<'_, T>, op: &str) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::Shape(format!("{op}: {sa:?} vs {sb:?}")));
    }
    Ok(sa)
}

impl<'t, T: Element> Var<'t, T> {
    /// Element-wise sum of two same-shape tensors.
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = same_shape(&self, &other, "add")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(&shape, data)?;
        Ok(self.tape().record(
            "add",
            &[self, other],
            value,
            Box::new(|args| {
                let g = args.grad_output;
                vec![
                    args.needs_grad[0].then(|| g.to_vec()),
                    args.needs_grad[1].then(|| g.to_vec()),
                ]
            }),
        ))
    }

    /// Element-wise product of two same-shape tensors.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = same_shape(&self, &other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(&shape, data)?;
        Ok(self.tape().record(
            "mul",
            &[self, other],
            value,
            Box::new(|args| {
                let g = args.grad_output;
                let (a, b) = (args.inputs[0].data(), args.inputs[1].data());
                vec![
                    args.needs_grad[0].then(|| g.iter().zip(b).map(|(&g, &y)| g * y).collect()),
                    args.needs_grad[1].then(|| g.iter().zip(a).map(|(&g, &x)| g * x).collect()),
                ]
            }),
        ))
    }

    pub fn scale(self, factor: T) -> Var<'t, T> {
        let value = self.value().map(|x| x * factor);
        self.tape().record(
            "scale",
            &[self],
            value,
            Box::new(move |args| vec![Some(args.grad_output.iter().map(|&g| g * factor).collect())]),
        )
    }

    pub fn square(self) -> Var<'t, T> {
        let value = self.value().map(|x| x * x);
        let two = T::from_f64(2.0);
        self.tape().record(
            "square",
            &[self],
            value,
            Box::new(move |args| {
                let x = args.inputs[0].data();
                vec![Some(
                    args.grad_output.iter().zip(x).map(|(&g, &x)| two * g * x).collect(),
                )]
            }),
        )
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t, T> {
        let value = Tensor::scalar(self.value().sum());
        self.tape().record(
            "sum",
            &[self],
            value,
            Box::new(|args| vec![Some(vec![args.grad_output[0]; args.inputs[0].numel()])]),
        )
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(self) -> Var<'t, T> {
        let v = self.value();
        let n = T::from_f64(v.numel() as f64);
        let value = Tensor::scalar(v.sum() / n);
        self.tape().record(
            "mean",
            &[self],
            value,
            Box::new(move |args| vec![Some(vec![args.grad_output[0] / n; args.inputs[0].numel()])]),
        )
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value().reshape(shape)?;
        Ok(self.tape().record(
            "reshape",
            &[self],
            value,
            Box::new(|args| vec![Some(args.grad_output.to_vec())]),
        ))
    }

    /// `max(x, 0)`; the gradient at exactly zero is zero.
    pub fn relu(self) -> Var<'t, T> {
        let value = self.value().map(|x| if x > T::zero() { x } else { T::zero() });
        self.tape().record(
            "relu",
            &[self],
            value,
            Box::new(|args| {
                let x = args.inputs[0].data();
                vec![Some(
                    args.grad_output
                        .iter()
                        .zip(x)
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }
}
